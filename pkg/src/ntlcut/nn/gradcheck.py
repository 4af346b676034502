"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-4,
                 indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``t.data``.

    When ``indices`` is given only those entries are perturbed; the rest stay 0.
    """
    g = np.zeros_like(t.data, dtype=np.float64)
    it = indices if indices is not None else list(np.ndindex(t.shape))
    for idx in it:
        old = t.data[idx].copy()
        t.data[idx] = old + h
        fp = float(f().data)
        t.data[idx] = old - h
        fm = float(f().data)
        t.data[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(f: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-4,
                    max_entries: int | None = None, rng: np.random.Generator | None = None,
                    floor: float = 1e-8) -> float:
    """Worst elementwise relative error between autodiff and central differences.

    ``max_entries`` limits the number of entries checked per tensor (sampled
    with ``rng``); by default every entry is checked.
    """
    for t in tensors:
        t.grad = None
    loss = f()
    loss.backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if max_entries is not None and t.size > max_entries:
            rng = rng or np.random.default_rng(0)
            flat = rng.choice(t.size, size=max_entries, replace=False)
            idx = [np.unravel_index(i, t.shape) for i in flat]
        else:
            idx = list(np.ndindex(t.shape))
        num = numeric_grad(f, t, h, idx)
        sel = tuple(np.array(i) for i in zip(*idx)) if idx else ()
        if idx:
            worst = max(worst, float(rel_error(analytic[sel], num[sel], floor).max()))
    return worst
