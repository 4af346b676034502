"""A small reverse-mode autodiff library with the layers needed for CUT."""

from . import checkpoint, functional
from .layers import (
    Conv2d,
    ConvTranspose2d,
    Identity,
    LeakyReLU,
    Linear,
    Module,
    Norm2d,
    Parameter,
    ReLU,
    Sequential,
    Tanh,
    UpsampleConv,
)
from .optim import Adam, linear_decay_lr
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    flip,
    get_default_dtype,
    leaky_relu,
    no_grad,
    relu,
    set_default_dtype,
    take,
    tanh,
)

__all__ = [
    "checkpoint", "functional", "Conv2d", "ConvTranspose2d", "Identity", "LeakyReLU", "Linear", "Module",
    "Norm2d", "Parameter", "ReLU", "Sequential", "Tanh", "UpsampleConv", "Adam",
    "linear_decay_lr", "Tensor", "as_tensor", "concat", "default_dtype", "flip",
    "get_default_dtype", "leaky_relu", "no_grad", "relu", "set_default_dtype", "take", "tanh",
]
