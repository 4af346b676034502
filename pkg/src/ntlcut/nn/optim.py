"""Adam optimizer and the constant-then-linear-decay learning-rate schedule."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import NonFiniteGradient
from .tensor import Tensor


def linear_decay_lr(epoch: int, lr0: float, n_const: int, n_decay: int) -> float:
    """``lr0`` through epoch ``n_const``, then linearly down to 0 at ``n_const + n_decay``.

    Epochs are counted from 1, so the last scheduled epoch runs at rate 0.
    """
    if epoch <= n_const or n_decay <= 0:
        return lr0
    return lr0 * max(0.0, 1.0 - (epoch - n_const) / n_decay)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.5, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                name = p.name or f"param[{i}]"
                raise NonFiniteGradient(f"non-finite gradient in {name}; step aborted")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {f"{prefix}step": np.array([self.step_count], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}m.{i}"] = m
            out[f"{prefix}v.{i}"] = v
        return out

    def load_state_dict(self, state: dict, prefix: str = "") -> None:
        self.step_count = int(state[f"{prefix}step"][0])
        for i in range(len(self.params)):
            self.m[i][...] = state[f"{prefix}m.{i}"]
            self.v[i][...] = state[f"{prefix}v.{i}"]
