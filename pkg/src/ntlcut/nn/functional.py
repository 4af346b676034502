"""Differentiable layer functions for NCHW image tensors."""

from __future__ import annotations

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DegenerateBatch, ShapeError
from .tensor import Tensor, add, as_tensor, make, matmul, reshape, transpose

log = logging.getLogger(__name__)


# -- padding ----------------------------------------------------------------

def _fold_reflect(g: np.ndarray, p: int, axis: int) -> np.ndarray:
    """Adjoint of numpy 'reflect' padding by ``p`` along ``axis``."""
    if p == 0:
        return g
    g = np.moveaxis(g, axis, -1)
    n = g.shape[-1] - 2 * p
    out = g[..., p:p + n].copy()
    for i in range(1, p + 1):
        out[..., i] += g[..., p - i]
        out[..., n - 1 - i] += g[..., n + p - 1 + i]
    return np.moveaxis(out, -1, axis)


def pad2d(x: Tensor, pad: int, mode: str = "zero") -> Tensor:
    """Pad both spatial axes by ``pad``; 'reflect' mirrors without repeating the edge."""
    x = as_tensor(x)
    if pad == 0:
        return x
    if mode == "reflect":
        if pad >= min(x.shape[2], x.shape[3]):
            raise ShapeError(f"reflect padding {pad} needs spatial size > {pad}, got {x.shape}")
        data = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")

        def backward(g):
            return (_fold_reflect(_fold_reflect(g, pad, 2), pad, 3),)
    elif mode == "zero":
        data = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

        def backward(g):
            return (np.ascontiguousarray(g[:, :, pad:-pad, pad:-pad]),)
    else:
        raise ValueError(f"unknown padding mode {mode!r}")
    return make(data, (x,), backward)


# -- convolution --------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Channel-first patches: (B, C, H, W) -> (B, C*kh*kw, Ho*Wo)."""
    B, C = x.shape[:2]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2:4]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, C * kh * kw, Ho * Wo)


def _correlate(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-1 valid cross-correlation on plain arrays."""
    O, C, kh, kw = w.shape
    B, _, H, W = x.shape
    out = np.matmul(w.reshape(O, -1), _im2col(x, kh, kw, 1))
    return out.reshape(B, O, H - kh + 1, W - kw + 1)


def _conv_valid(x: Tensor, w: Tensor, stride: int) -> Tensor:
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Cw}")
    if H < kh or W < kw:
        raise ShapeError(f"conv2d: input {H}x{W} smaller than kernel {kh}x{kw}")
    Ho = (H - kh) // stride + 1
    Wo = (W - kw) // stride + 1
    K, L = C * kh * kw, Ho * Wo
    cols = _im2col(x.data, kh, kw, stride)
    wmat = w.data.reshape(O, K)
    out = np.matmul(wmat, cols).reshape(B, O, Ho, Wo)

    def backward(g):
        g3 = g.reshape(B, O, L)
        gw = None
        if w.requires_grad:
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gx = None
        if x.requires_grad and stride == 1 and O <= C:
            # full correlation with the flipped kernel; its im2col is the smaller one
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wt = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx = _correlate(gp, wt).astype(x.dtype, copy=False)
        elif x.requires_grad:
            gcols = np.matmul(wmat.T, g3).reshape(B, C, kh, kw, Ho, Wo)
            gx = np.zeros(x.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, i, j]
        return gx, gw

    return make(out, (x, w), backward)


def _add_channel_bias(y: Tensor, b: Tensor | None) -> Tensor:
    if b is None:
        return y
    return add(y, reshape(b, (1, -1, 1, 1)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, padding_mode: str = "zero") -> Tensor:
    """Cross-correlation of ``x`` (B,C,H,W) with ``weight`` (O,C,kh,kw)."""
    x = as_tensor(x)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    if weight.shape[2] % 2 == 0 and padding:
        log.debug("even kernel %s with padding %d", weight.shape, padding)
    x = pad2d(x, padding, padding_mode)
    return _add_channel_bias(_conv_valid(x, weight, stride), bias)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Fractionally strided convolution; ``weight`` is (C_in, C_out, kh, kw).

    Output size per axis is ``(n - 1) * stride - 2 * padding + k + output_padding``.
    """
    x = as_tensor(x)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-D tensors, got {x.shape}, {weight.shape}")
    B, C, H, W = x.shape
    Ci, O, kh, kw = weight.shape
    if C != Ci:
        raise ShapeError(f"conv_transpose2d: input has {C} channels, weight expects {Ci}")
    s = stride
    Hf, Wf = (H - 1) * s + kh, (W - 1) * s + kw
    Ho = Hf - 2 * padding + output_padding
    Wo = Wf - 2 * padding + output_padding
    if Ho <= 0 or Wo <= 0:
        raise ShapeError("conv_transpose2d output would be empty")
    xmat = x.data.transpose(0, 2, 3, 1).reshape(B * H * W, C)
    wmat = weight.data.reshape(C, O * kh * kw)
    cols = (xmat @ wmat).reshape(B, H, W, O, kh, kw)
    # room for output_padding beyond the full extent
    ext_h = max(Hf, padding + Ho)
    ext_w = max(Wf, padding + Wo)
    full = np.zeros((B, O, ext_h, ext_w), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + s * H:s, j:j + s * W:s] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(full[:, :, padding:padding + Ho, padding:padding + Wo])

    def backward(g):
        gfull = np.zeros((B, O, ext_h, ext_w), dtype=g.dtype)
        gfull[:, :, padding:padding + Ho, padding:padding + Wo] = g
        gfull = gfull[:, :, :Hf, :Wf]
        win = sliding_window_view(gfull, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
        gcols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * H * W, O * kh * kw)
        gx = (gcols @ wmat.T).reshape(B, H, W, C).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = (xmat.T @ gcols).reshape(weight.shape) if weight.requires_grad else None
        return (np.ascontiguousarray(gx) if gx is not None else None), gw

    y = make(out, (x, weight), backward)
    return _add_channel_bias(y, bias)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return make(out, (x,), backward)


# -- normalization ------------------------------------------------------------

def _standardize(x: Tensor, axes: tuple[int, ...], mean: np.ndarray, var: np.ndarray,
                 eps: float, batch_stats: bool) -> Tensor:
    denom = var + eps
    if not np.all(np.isfinite(denom)) or np.any(denom <= 0):
        raise DegenerateBatch("normalization variance is not positive and finite")
    inv = 1.0 / np.sqrt(denom)
    xhat = (x.data - mean) * inv

    def backward(g):
        if not batch_stats:
            return (g * inv,)
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return make(xhat.astype(x.dtype, copy=False), (x,), backward)


def batch_norm(x: Tensor, gamma: Tensor | None, beta: Tensor | None,
               running_mean: np.ndarray | None = None, running_var: np.ndarray | None = None,
               training: bool = True, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel standardization over (N, H, W) with a learnable affine.

    In training mode the running buffers are updated in place.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("batch_norm needs a channel dimension")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        m = x.data.mean(axis=axes, keepdims=True)
        v = x.data.var(axis=axes, keepdims=True)
        if running_mean is not None:
            n = x.data.size // x.shape[1]
            unbiased = v.reshape(-1) * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * m.reshape(-1)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
        xhat = _standardize(x, axes, m, v, eps, True)
    else:
        m = running_mean.reshape(bshape).astype(x.dtype)
        v = running_var.reshape(bshape).astype(x.dtype)
        xhat = _standardize(x, axes, m, v, eps, False)
    return _affine(xhat, gamma, beta, bshape)


def instance_norm(x: Tensor, gamma: Tensor | None, beta: Tensor | None,
                  eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel standardization over (H, W)."""
    x = as_tensor(x)
    axes = tuple(range(2, x.ndim))
    m = x.data.mean(axis=axes, keepdims=True)
    v = x.data.var(axis=axes, keepdims=True)
    xhat = _standardize(x, axes, m, v, eps, True)
    return _affine(xhat, gamma, beta, (1, -1) + (1,) * (x.ndim - 2))


def _affine(xhat: Tensor, gamma, beta, bshape) -> Tensor:
    out = xhat
    if gamma is not None:
        out = out * reshape(gamma, bshape)
    if beta is not None:
        out = out + reshape(beta, bshape)
    return out


# -- dense ------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight in-features {weight.shape[1]}")
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), transpose(weight, (1, 0)))
    if bias is not None:
        y = add(y, bias)
    return reshape(y, lead + (weight.shape[0],))


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale vectors along ``axis`` to unit length.

    Vectors with norm <= ``eps`` map to zero; the count is logged and stored
    on the result as ``zero_norm`` through :func:`last_zero_norm_count`.
    """
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    small = norm <= eps
    safe = np.where(small, 1.0, norm)
    y = np.where(small, 0.0, x.data / safe).astype(x.dtype)
    global _ZERO_NORM
    _ZERO_NORM = int(small.sum())
    if _ZERO_NORM:
        log.warning("l2_normalize: %d zero-norm vectors mapped to zero", _ZERO_NORM)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (np.where(small, 0.0, (g - y * dot) / safe).astype(x.dtype),)

    return make(y, (x,), backward)


_ZERO_NORM = 0


def last_zero_norm_count() -> int:
    """Number of zero-norm vectors seen by the most recent l2_normalize call."""
    return _ZERO_NORM


# -- losses -----------------------------------------------------------------

def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return make(out, (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits).

    ``logits`` is (..., K); ``targets`` has the leading shape of ``logits``.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.intp)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)
    n = targets.size
    out = np.asarray(-picked.sum() / n, dtype=logits.dtype)

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, targets[..., None],
                          np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * (g / n),)

    return make(out, (logits,), backward)


def mse_to(x: Tensor, target: float) -> Tensor:
    """mean((x - target)^2) against a constant target."""
    x = as_tensor(x)
    d = x.data - target
    out = np.asarray((d * d).mean(), dtype=x.dtype)
    n = x.data.size
    return make(out, (x,), lambda g: (g * 2.0 * d / n,))
