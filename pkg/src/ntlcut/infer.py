"""Apply a trained generator to a full DMSP-like raster, tile by tile."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gridio import write_geotiff, write_grid
from .nn import Tensor, no_grad
from .raster import (RadiometricCalibration, Raster, clamp_negative, dequantize_codes,
                     log1p_transform, quantize_codes)
from .train import codes_to_unit, unit_to_codes

log = logging.getLogger(__name__)


@dataclass
class InferenceInfo:
    tiles: int
    padded: bool
    pad_rows: int
    pad_cols: int
    overlap: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _run_tiles(generator, tiles: np.ndarray, batch: int) -> np.ndarray:
    """Generator outputs in [-1, 1] for (N, P, P) unit-scaled tiles."""
    out = []
    with no_grad():
        for i in range(0, len(tiles), batch):
            y, _ = generator(Tensor(tiles[i:i + batch, None]), ())
            out.append(y.data[:, 0].astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0,) + tiles.shape[1:])


def tent_weights(p: int) -> np.ndarray:
    t = 1.0 - np.abs(2.0 * (np.arange(p) + 0.5) / p - 1.0)
    return np.outer(t, t) + 1e-6


def translate_codes(generator, codes: np.ndarray, patch: int, overlap: bool = False,
                    batch: int = 8) -> tuple[np.ndarray, InferenceInfo]:
    """Translate a 2-D array of DMSP codes into VIIRS codes of the same shape.

    Without overlap the array is zero-padded to a multiple of ``patch`` and cut
    into disjoint tiles. With overlap, tiles advance by half a patch and are
    blended with a tent window.
    """
    h, w = codes.shape
    step = patch // 2 if overlap else patch
    n_r = max(1, -(-(h - patch) // step) + 1) if h > patch else 1
    n_c = max(1, -(-(w - patch) // step) + 1) if w > patch else 1
    H, W = (n_r - 1) * step + patch, (n_c - 1) * step + patch
    pad_r, pad_c = H - h, W - w
    if pad_r or pad_c:
        log.warning("raster %dx%d is not tiled exactly by %d-pixel patches; zero-padding by "
                    "%d rows and %d columns and cropping the output", h, w, patch, pad_r, pad_c)
    padded = np.zeros((H, W), dtype=np.uint8)
    padded[:h, :w] = codes
    origins = [(r * step, c * step) for r in range(n_r) for c in range(n_c)]
    tiles = np.stack([padded[r:r + patch, c:c + patch] for r, c in origins])
    was_training = generator.training
    generator.eval()
    try:
        outs = _run_tiles(generator, codes_to_unit(tiles), batch)
    finally:
        generator.train(was_training)
    acc = np.zeros((H, W))
    wsum = np.zeros((H, W))
    wt = tent_weights(patch) if overlap else np.ones((patch, patch))
    for (r, c), o in zip(origins, outs):
        acc[r:r + patch, c:c + patch] += wt * o
        wsum[r:r + patch, c:c + patch] += wt
    out = unit_to_codes(acc / wsum)[:h, :w]
    return out, InferenceInfo(len(origins), bool(pad_r or pad_c), pad_r, pad_c, overlap)


def infer_raster(generator, dmsp: Raster, cal_dmsp: RadiometricCalibration,
                 cal_viirs: RadiometricCalibration, patch: int = 64, overlap: bool = False,
                 batch: int = 8) -> tuple[Raster, InferenceInfo]:
    """DMSP-like radiance raster -> calibrated VIIRS-like radiance raster on the same grid."""
    valid = dmsp.valid_mask()
    logv = log1p_transform(clamp_negative(dmsp)).values
    codes = quantize_codes(np.where(valid, logv, 0.0), cal_dmsp)
    out_codes, info = translate_codes(generator, codes, patch, overlap, batch)
    radiance = np.maximum(np.expm1(dequantize_codes(out_codes, cal_viirs).astype(np.float64)), 0.0)
    radiance = radiance.astype(np.float32)
    nodata = dmsp.nodata
    if not valid.all():
        radiance[~valid] = np.nan if nodata is None else nodata
    return Raster(radiance, dmsp.pixel_size, dmsp.origin, nodata), info


def write_outputs(r: Raster, out_stem) -> tuple[Path, Path]:
    """Write ``<stem>.tif`` and ``<stem>.bin``."""
    stem = Path(out_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    tif, grid = stem.with_suffix(".tif"), stem.with_suffix(".bin")
    write_geotiff(tif, r)
    write_grid(grid, r)
    return tif, grid
