"""Module containers and the layer set used by the translation networks."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, get_default_dtype, leaky_relu, relu, tanh


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.asarray(data, dtype=get_default_dtype()), requires_grad=True, name=name)


class Module:
    """Minimal container: registers parameters and child modules in order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for n, p in self._params.items():
            yield prefix + n, p
        for n, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{n}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for n, b in self._buffers.items():
            yield prefix + n, b
        for n, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{n}.")

    def modules(self) -> Iterator[Module]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> Module:
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def astype(self, dtype) -> Module:
        """Cast parameters and buffers in place (used to switch to float64)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for n, b in list(m._buffers.items()):
                m.register_buffer(n, b.astype(dtype))
        return self

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((n, p.data) for n, p in self.named_parameters())
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        for n, p in params.items():
            if n not in state:
                raise KeyError(f"missing parameter {n!r}")
            if state[n].shape != p.shape:
                raise ValueError(f"{n}: shape {state[n].shape} != {p.shape}")
            p.data = np.array(state[n], dtype=p.dtype)
        for m_prefix, m in self._named_modules():
            for bn, b in list(m._buffers.items()):
                key = m_prefix + bn
                if key not in state:
                    raise KeyError(f"missing buffer {key!r}")
                b[...] = state[key]

    def _named_modules(self, prefix: str = ""):
        yield prefix, self
        for n, m in self._modules.items():
            yield from m._named_modules(f"{prefix}{n}.")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def init_normal(shape, rng: np.random.Generator, std: float = 0.02, mean: float = 0.0):
    return rng.normal(mean, std, size=shape).astype(get_default_dtype())


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, padding_mode: str = "zero",
                 bias: bool = True, init_std: float = 0.02):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.padding_mode = padding_mode
        self.weight = Parameter(init_normal((out_ch, in_ch, kernel, kernel), rng, init_std))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.padding_mode)


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, output_padding: int = 0,
                 bias: bool = True, init_std: float = 0.02):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        self.weight = Parameter(init_normal((in_ch, out_ch, kernel, kernel), rng, init_std))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding,
                                  self.output_padding)


class UpsampleConv(Module):
    """Nearest-neighbor 2x upsampling followed by a 3x3 reflect-padded convolution."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, bias: bool = True,
                 init_std: float = 0.02):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, 3, rng, padding=1, padding_mode="reflect",
                           bias=bias, init_std=init_std)

    def forward(self, x):
        return self.conv(F.upsample_nearest(x, 2))


class Norm2d(Module):
    """Batch or instance normalization with a learnable per-channel affine."""

    def __init__(self, channels: int, kind: str, rng: np.random.Generator,
                 momentum: float = 0.1, eps: float = 1e-5, init_std: float = 0.02):
        super().__init__()
        if kind not in ("batch", "instance"):
            raise ValueError(f"unknown norm kind {kind!r}")
        self.kind = kind
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(init_normal((channels,), rng, init_std, mean=1.0))
        self.beta = Parameter(np.zeros(channels))
        if kind == "batch":
            self.register_buffer("running_mean", np.zeros(channels, dtype=get_default_dtype()))
            self.register_buffer("running_var", np.ones(channels, dtype=get_default_dtype()))

    def forward(self, x):
        if self.kind == "instance":
            return F.instance_norm(x, self.gamma, self.beta, self.eps)
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, in_f: int, out_f: int, rng: np.random.Generator, bias: bool = True,
                 init_std: float = 0.02):
        super().__init__()
        self.weight = Parameter(init_normal((out_f, in_f), rng, init_std))
        self.bias = Parameter(np.zeros(out_f)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class ReLU(Module):
    def forward(self, x):
        return relu(x)


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        return leaky_relu(x, self.slope)


class Tanh(Module):
    def forward(self, x):
        return tanh(x)


class Identity(Module):
    def forward(self, x):
        return x


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    @property
    def layers(self) -> list[Module]:
        return list(self._modules.values())

    def __len__(self):
        return len(self._modules)

    def __getitem__(self, i: int) -> Module:
        return self.layers[i]

    def forward(self, x):
        for layer in self._modules.values():
            x = layer(x)
        return x
