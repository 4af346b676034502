"""Agreement metrics, windowed SSIM, stratified errors and the two reference baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter
from scipy.stats import rankdata

from .errors import DomainError, ShapeError, SingularFit, WindowTooLarge, ZeroVariance

DEFAULT_EDGES = (0.0, 20.0, 40.0, 60.0, 80.0, math.inf)


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ShapeError("need at least 2 samples")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("metric inputs must be finite")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("pearson undefined for a constant sequence")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def spearman(x, y) -> float:
    x, y = _pair(x, y)
    return pearson(rankdata(x), rankdata(y))


def r_squared(pred, truth) -> float:
    p, t = _pair(pred, truth)
    ss_tot = float(((t - t.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ZeroVariance("R^2 undefined for constant truth")
    return 1.0 - float(((t - p) ** 2).sum()) / ss_tot


def ccc(x, y) -> float:
    x, y = _pair(x, y)
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        raise ZeroVariance("CCC undefined for identical constants")
    cov = float(((x - mx) * (y - my)).mean())
    return float(np.clip(2.0 * cov / denom, -1.0, 1.0))


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.abs(p - t).mean())


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.sqrt(((p - t) ** 2).mean()))


def safe(fn, *args, **kw) -> float | None:
    """``fn(*args)`` or None when the metric is undefined for the input."""
    try:
        return fn(*args, **kw)
    except (ZeroVariance, ShapeError):
        return None


# -- SSIM ---------------------------------------------------------------------

def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim_map(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
             data_range: float | None = None) -> np.ndarray:
    """SSIM at every fully covered window position (no padding)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"ssim expects two equal 2-D arrays, got {a.shape} and {b.shape}")
    if window > min(a.shape):
        raise WindowTooLarge(f"window {window} exceeds image size {a.shape}")
    if data_range is None:
        data_range = max(a.max(), b.max()) - min(a.min(), b.min())
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    g = gaussian_window(window, sigma)
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    s_aa = _filter_valid(a * a, g) - mu_a ** 2
    s_bb = _filter_valid(b * b, g) - mu_b ** 2
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (s_aa + s_bb + c2)
    out = np.ones_like(num)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float | None = None) -> float:
    """Mean Gaussian-weighted SSIM.

    ``data_range`` defaults to the joint range of both inputs, which keeps the
    result symmetric in its arguments.
    """
    return float(ssim_map(a, b, window, sigma, k1, k2, data_range).mean())


# -- stratified errors --------------------------------------------------------

@dataclass
class StratumRow:
    label: str
    lo: float
    hi: float
    count: int
    mae: float | None
    rmse: float | None
    r2: float | None

    def to_dict(self) -> dict:
        return {"range": self.label, "lo": self.lo, "hi": None if math.isinf(self.hi) else self.hi,
                "pixel_count": self.count, "mae": self.mae, "rmse": self.rmse, "r2": self.r2}


def _label(lo: float, hi: float) -> str:
    if math.isinf(hi):
        return f">{lo:g}"
    return f"{lo:g}-{hi:g}"


def stratified_errors(pred, truth, edges: Sequence[float] = DEFAULT_EDGES) -> list[StratumRow]:
    """Per-bin MAE / RMSE / R^2 keyed on the truth value; an overall row is appended.

    Bins are half-open ``[lo, hi)``. Empty bins are kept with count 0 and
    undefined (None) metrics.
    """
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ShapeError(f"length mismatch: {p.size} vs {t.size}")
    edges = [float(e) for e in edges]
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must increase strictly")
    if t.size and (t.min() < edges[0] or t.max() >= edges[-1]):
        raise DomainError(f"truth values outside [{edges[0]}, {edges[-1]})")
    rows = []
    for lo, hi in zip(edges, edges[1:]):
        sel = (t >= lo) & (t < hi)
        rows.append(_stratum(_label(lo, hi), lo, hi, p[sel], t[sel]))
    rows.append(_stratum("overall", edges[0], edges[-1], p, t))
    return rows


def _stratum(label, lo, hi, p, t) -> StratumRow:
    n = int(p.size)
    if n == 0:
        return StratumRow(label, lo, hi, 0, None, None, None)
    err = p - t
    m = float(np.abs(err).mean())
    r = float(np.sqrt((err ** 2).mean()))
    return StratumRow(label, lo, hi, n, m, r, safe(r_squared, p, t))


# -- baselines ------------------------------------------------------------------

def fit_linear(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of y on x."""
    x, y = _pair(x, y)
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise SingularFit("x has zero variance")
    a = float(dx @ (y - y.mean())) / sxx
    return a, float(y.mean() - a * x.mean())


@dataclass(frozen=True)
class LinearBaseline:
    """Linear map in log1p space; predictions are returned as radiance."""

    slope: float
    intercept: float

    def predict_log(self, x_log: np.ndarray) -> np.ndarray:
        return self.slope * np.asarray(x_log, dtype=np.float64) + self.intercept

    def predict(self, x_log: np.ndarray) -> np.ndarray:
        return np.maximum(np.expm1(self.predict_log(x_log)), 0.0)


def baseline_linear(x_log, y_log) -> LinearBaseline:
    return LinearBaseline(*fit_linear(x_log, y_log))


def code_cdf(codes, levels: int = 256) -> np.ndarray:
    c = np.asarray(codes).ravel()
    if c.size == 0:
        raise ShapeError("empty sample")
    if c.min() < 0 or c.max() >= levels:
        raise DomainError(f"codes outside 0..{levels - 1}")
    h = np.bincount(c.astype(np.intp), minlength=levels).astype(np.float64)
    return np.cumsum(h) / h.sum()


def local_mean(codes: np.ndarray, size: int = 3) -> np.ndarray:
    """Mean over a ``size`` x ``size`` neighbourhood of each pixel, per 2-D slice."""
    c = np.asarray(codes, dtype=np.float64)
    if c.ndim < 2:
        return np.zeros_like(c)
    return uniform_filter(c, size=size, mode="nearest", axes=(-2, -1))


def exact_histmatch(source_codes, reference_cdf, tiebreak=None) -> np.ndarray:
    """Histogram specification that also splits tied source levels.

    Pixels are ordered by code, ties broken by ``tiebreak`` (then by position),
    and the pixel at rank ``i`` of ``n`` receives the reference level whose CDF
    first reaches ``(i + 0.5) / n``. The output histogram therefore follows the
    reference to within one count per level, and a higher code never maps to a
    lower level.
    """
    c = np.asarray(source_codes)
    ref = np.asarray(reference_cdf, dtype=np.float64)
    flat = c.ravel()
    if flat.size == 0:
        raise ShapeError("empty sample")
    if flat.min() < 0 or flat.max() >= ref.size:
        raise DomainError(f"codes outside 0..{ref.size - 1}")
    tb = np.zeros(flat.size) if tiebreak is None else np.asarray(tiebreak, dtype=np.float64).ravel()
    order = np.lexsort((tb, flat))
    q = (np.arange(flat.size) + 0.5) / flat.size
    ranked = np.clip(np.searchsorted(ref, q - 1e-12, side="left"), 0, ref.size - 1)
    out = np.empty(flat.size, dtype=np.intp)
    out[order] = ranked
    return out.reshape(c.shape)


@dataclass(frozen=True)
class HistogramMatcher:
    """Maps DMSP codes onto the VIIRS code distribution of a reference pool.

    Images (arrays with at least two dimensions) break ties between equal codes
    by their 3 x 3 neighbourhood mean, so dark pixels near bright ones rank
    higher.
    """

    reference_cdf: np.ndarray

    @classmethod
    def fit(cls, reference_codes, levels: int = 256) -> HistogramMatcher:
        return cls(code_cdf(reference_codes, levels))

    def __call__(self, codes) -> np.ndarray:
        c = np.asarray(codes)
        return exact_histmatch(c, self.reference_cdf, local_mean(c))


def baseline_histmatch(source_codes, reference_cdf) -> np.ndarray:
    """Map ``source_codes`` so their distribution follows ``reference_cdf``."""
    return HistogramMatcher(np.asarray(reference_cdf, dtype=np.float64))(source_codes)


def total_variation(h1, h2) -> float:
    p = np.asarray(h1, dtype=np.float64)
    q = np.asarray(h2, dtype=np.float64)
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())


def density_grid(truth, pred, bins: int = 512, vmax: float | None = None) -> tuple[np.ndarray, float]:
    """log10(1 + count) over a bins x bins grid of (truth, pred) in log1p space."""
    t = np.log1p(np.maximum(np.asarray(truth, dtype=np.float64).ravel(), 0))
    p = np.log1p(np.maximum(np.asarray(pred, dtype=np.float64).ravel(), 0))
    if vmax is None:
        vmax = float(max(t.max(initial=0.0), p.max(initial=0.0), 1e-9))
    h, _, _ = np.histogram2d(t, p, bins=bins, range=[[0, vmax], [0, vmax]])
    return np.log10(1.0 + h), vmax
