"""Single-band raster model and the radiometric transforms used on it.

Rasters are north-up geographic grids. ``origin`` is the (lon, lat) of the
upper-left corner of the upper-left pixel, so pixel ``(row, col)`` has its
center at ``(lon0 + (col + 0.5) * ps, lat0 - (row + 0.5) * ps)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegenerateCalibration,
    DomainError,
    EmptyRaster,
    ExtentMismatch,
    PropagatedNaN,
)

# Codes that sit within this many quantization steps below an integer boundary
# are snapped up, so that quantize(dequantize(u)) == u survives float32 storage.
_QUANT_GUARD = 1e-3
_EXP_LIMIT = math.log(float(np.finfo(np.float32).max))


@dataclass(frozen=True, eq=False)
class Raster:
    values: np.ndarray
    pixel_size: float
    origin: tuple[float, float] = (0.0, 0.0)
    nodata: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"raster values must be 2-D, got shape {values.shape}")
        if values.dtype not in (np.float32, np.uint8):
            values = values.astype(np.float32)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if values.shape[0] <= 0 or values.shape[1] <= 0:
            raise ValueError("raster must have width > 0 and height > 0")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be > 0, got {self.pixel_size}")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def valid_mask(self) -> np.ndarray:
        if self.nodata is None:
            return np.ones(self.values.shape, dtype=bool)
        if isinstance(self.nodata, float) and math.isnan(self.nodata):
            return ~np.isnan(self.values)
        return self.values != self.nodata

    def valid_values(self) -> np.ndarray:
        return self.values[self.valid_mask()]

    def with_values(self, values: np.ndarray) -> Raster:
        return replace(self, values=values)

    def pixel_center(self, row: float, col: float) -> tuple[float, float]:
        lon0, lat0 = self.origin
        return lon0 + (col + 0.5) * self.pixel_size, lat0 - (row + 0.5) * self.pixel_size

    def same_grid(self, other: Raster) -> bool:
        return (
            self.shape == other.shape
            and math.isclose(self.pixel_size, other.pixel_size, rel_tol=1e-9)
            and all(math.isclose(a, b, rel_tol=0, abs_tol=1e-9 * max(1.0, abs(a)))
                    for a, b in zip(self.origin, other.origin))
        )


@dataclass(frozen=True)
class RadiometricCalibration:
    """Clipping bounds of the log1p-domain radiance (0.1th / 99.9th percentile)."""

    v_min: float
    v_max: float

    def __post_init__(self):
        if not (math.isfinite(self.v_min) and math.isfinite(self.v_max)):
            raise DegenerateCalibration(f"non-finite bounds ({self.v_min}, {self.v_max})")
        if self.v_min < 0:
            raise DegenerateCalibration(f"v_min must be >= 0, got {self.v_min}")
        if self.v_max - self.v_min < 1e-9:
            raise DegenerateCalibration(f"v_max - v_min < 1e-9 ({self.v_min}, {self.v_max})")

    @property
    def step(self) -> float:
        return (self.v_max - self.v_min) / 255.0

    def to_dict(self) -> dict:
        return {"v_min": self.v_min, "v_max": self.v_max}

    @classmethod
    def from_dict(cls, d: dict) -> RadiometricCalibration:
        return cls(float(d["v_min"]), float(d["v_max"]))


def _check_finite(r: Raster) -> np.ndarray:
    mask = r.valid_mask()
    if not np.all(np.isfinite(r.values[mask])):
        raise PropagatedNaN("raster contains non-finite values outside nodata")
    return mask


def clamp_negative(r: Raster) -> Raster:
    """Set negative radiances (sensor noise floor) to zero, leaving nodata alone."""
    mask = r.valid_mask()
    out = r.values.astype(np.float32, copy=True)
    out[mask & (out < 0)] = 0.0
    return r.with_values(out)


def log1p_transform(r: Raster) -> Raster:
    mask = _check_finite(r)
    vals = r.values.astype(np.float64)
    if np.any(vals[mask] < -1):
        raise DomainError("log1p undefined for values below -1; clamp negative radiance first")
    out = vals.copy()
    with np.errstate(divide="ignore"):
        out[mask] = np.log1p(vals[mask])
    return r.with_values(out.astype(np.float32))


def inverse_log1p(r: Raster) -> Raster:
    mask = _check_finite(r)
    vals = r.values.astype(np.float64)
    if np.any(vals[mask] > _EXP_LIMIT):
        raise OverflowError("exp(y) exceeds the float32 range")
    out = vals.copy()
    out[mask] = np.expm1(vals[mask])
    return r.with_values(out.astype(np.float32))


def quantile(values: np.ndarray, q: float) -> float:
    """Linear-interpolated quantile between order statistics (inclusive rule)."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    v = np.asarray(values, dtype=np.float64).ravel()
    n = v.size
    if n == 0:
        raise EmptyRaster("no valid values")
    h = (n - 1) * q
    lo = int(math.floor(h))
    hi = min(lo + 1, n - 1)
    part = np.partition(v, (lo, hi))
    a, b = part[lo], part[hi]
    return float(a + (b - a) * (h - lo))


def percentile(r: Raster, q: float) -> float:
    vals = r.valid_values()
    if vals.size == 0:
        raise EmptyRaster("all pixels are nodata")
    return quantile(vals, q)


def quantize_codes(v: np.ndarray, cal: RadiometricCalibration) -> np.ndarray:
    span = cal.v_max - cal.v_min
    if span < 1e-9:
        raise DegenerateCalibration("v_max - v_min < 1e-9")
    v = np.asarray(v, dtype=np.float64)
    ratio = (np.clip(v, cal.v_min, cal.v_max) - cal.v_min) / span
    codes = np.floor(255.0 * ratio + _QUANT_GUARD)
    # the upper bound is special-cased so that 255 is reachable
    codes[v >= cal.v_max] = 255
    return np.clip(codes, 0, 255).astype(np.uint8)


def dequantize_codes(u: np.ndarray, cal: RadiometricCalibration) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return cal.v_min + (u / 255.0) * (cal.v_max - cal.v_min)


def quantize_u8(r: Raster, cal: RadiometricCalibration) -> Raster:
    mask = _check_finite(r)
    codes = np.zeros(r.shape, dtype=np.uint8)
    codes[mask] = quantize_codes(r.values[mask], cal)
    return Raster(codes, r.pixel_size, r.origin, None)


def dequantize_u8(r: Raster, cal: RadiometricCalibration) -> Raster:
    u = r.values.astype(np.float64)
    if np.any((u < 0) | (u > 255)):
        raise ValueError("8-bit codes must lie in [0, 255]")
    return Raster(dequantize_codes(u, cal).astype(np.float32), r.pixel_size, r.origin)


def resampled_shape(width: int, height: int, pixel_size: float,
                    target_pixel_size: float) -> tuple[int, int]:
    """Output (width, height) covering the same extent at the new pixel size."""
    if not target_pixel_size > 0:
        raise ValueError("target_pixel_size must be > 0")
    factor = pixel_size / target_pixel_size
    w = int(round(width * factor))
    h = int(round(height * factor))
    if w <= 0 or h <= 0:
        raise ExtentMismatch(f"resampling {width}x{height} by {factor:g} gives an empty grid")
    return w, h


def _axis_weights(n_in: int, n_out: int, scale: float):
    # output pixel centers mapped back to fractional input indices; edges clamp
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = pos - i0
    return i0, i1, w1


def bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D array with 4-neighbor bilinear interpolation of pixel centers."""
    h, w = values.shape
    v = values.astype(np.float64)
    r0, r1, wr = _axis_weights(h, out_h, h / out_h)
    c0, c1, wc = _axis_weights(w, out_w, w / out_w)
    rows = v[r0] * (1.0 - wr)[:, None] + v[r1] * wr[:, None]
    return rows[:, c0] * (1.0 - wc) + rows[:, c1] * wc


def resample_bilinear(r: Raster, target_pixel_size: float) -> Raster:
    out_w, out_h = resampled_shape(r.width, r.height, r.pixel_size, target_pixel_size)
    if r.nodata is not None and not np.all(r.valid_mask()):
        raise ValueError("resample_bilinear does not interpolate across nodata")
    out = bilinear_resize(r.values, out_h, out_w).astype(np.float32)
    # extent is preserved exactly: out_w * new_ps == width * ps
    new_ps = r.pixel_size * r.width / out_w
    return Raster(out, new_ps, r.origin, r.nodata)


__all__ = [
    "Raster",
    "RadiometricCalibration",
    "clamp_negative",
    "log1p_transform",
    "inverse_log1p",
    "quantile",
    "percentile",
    "quantize_u8",
    "dequantize_u8",
    "quantize_codes",
    "dequantize_codes",
    "resampled_shape",
    "bilinear_resize",
    "resample_bilinear",
]
