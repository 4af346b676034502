"""Patch extraction, filtering, calibration estimation and block splitting."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateCalibration, MaskMismatch, RasterTooSmall, TooFewBlocks
from .raster import (
    RadiometricCalibration,
    Raster,
    clamp_negative,
    log1p_transform,
    quantile,
    quantize_codes,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DOMAINS = ("DMSP", "VIIRS")
BLOCK_DEG = 5.0


@dataclass(frozen=True)
class FilterThresholds:
    min_land_fraction: float = 0.30
    max_abs_latitude: float = 60.0
    tau_dark: float = 0.1
    tau_uniform: float = 0.05
    clip_quantile: float = 0.999

    def __post_init__(self):
        if not 0.0 <= self.min_land_fraction <= 1.0:
            raise ValueError("min_land_fraction must lie in [0, 1]")
        if not 0.0 <= self.max_abs_latitude <= 90.0:
            raise ValueError("max_abs_latitude must lie in [0, 90]")
        if self.tau_dark < 0 or self.tau_uniform < 0:
            raise ValueError("radiometric thresholds must be non-negative")
        if not 0.5 < self.clip_quantile <= 1.0:
            raise ValueError("clip_quantile must lie in (0.5, 1]")


@dataclass(frozen=True, eq=False)
class Patch:
    data: np.ndarray
    source_domain: str
    tile_xy: tuple[int, int]
    center: tuple[float, float]
    geo_block: tuple[int, int]
    size: int
    grid: tuple                      # (height, width, pixel_size, lon0, lat0) of the source raster
    scene: int | None = None
    split: str | None = None
    land_fraction: float | None = None
    mean_log1p: float = 0.0
    std_log1p: float = 0.0

    @property
    def pixel_offset(self) -> tuple[int, int]:
        tx, ty = self.tile_xy
        return ty * self.size, tx * self.size

    @property
    def pair_id(self) -> str:
        s = "x" if self.scene is None else f"{self.scene:05d}"
        return f"s{s}_x{self.tile_xy[0]:04d}_y{self.tile_xy[1]:04d}"

    def metadata(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "scene": self.scene,
            "source_domain": self.source_domain,
            "tile_xy": list(self.tile_xy),
            "pixel_offset": list(self.pixel_offset),
            "size": self.size,
            "center": [round(self.center[0], 9), round(self.center[1], 9)],
            "geo_block": list(self.geo_block),
            "split": self.split,
            "land_fraction": self.land_fraction,
            "mean_log1p": self.mean_log1p,
            "std_log1p": self.std_log1p,
        }


def _grid_of(r: Raster) -> tuple:
    return (r.height, r.width, r.pixel_size, r.origin[0], r.origin[1])


def geo_block(lon: float, lat: float, block_deg: float = BLOCK_DEG) -> tuple[int, int]:
    return int(math.floor(lon / block_deg)), int(math.floor(lat / block_deg))


def extract_patches(r: Raster, size: int, domain: str = "DMSP",
                    scene: int | None = None) -> list[Patch]:
    """Non-overlapping ``size``x``size`` tiles in row-major tile order.

    Trailing partial tiles are dropped. Patch moments are taken over the
    data as given, so pass a log1p-domain raster to get log1p moments.
    """
    if size < 8:
        raise ValueError(f"patch size must be >= 8, got {size}")
    if r.width < size or r.height < size:
        raise RasterTooSmall(f"{r.width}x{r.height} raster is smaller than patch size {size}")
    nx, ny = r.width // size, r.height // size
    grid = _grid_of(r)
    out = []
    for ty in range(ny):
        for tx in range(nx):
            data = r.values[ty * size:(ty + 1) * size, tx * size:(tx + 1) * size]
            lon, lat = r.pixel_center(ty * size + (size - 1) / 2, tx * size + (size - 1) / 2)
            d64 = data.astype(np.float64)
            out.append(Patch(
                data=data,
                source_domain=domain,
                tile_xy=(tx, ty),
                center=(lon, lat),
                geo_block=geo_block(lon, lat),
                size=size,
                grid=grid,
                scene=scene,
                mean_log1p=float(d64.mean()),
                std_log1p=float(d64.std()),
            ))
    return out


def land_fractions(patches: Sequence[Patch], land_mask: Raster) -> list[float]:
    grid = _grid_of(land_mask)
    out = []
    for p in patches:
        if p.grid[:2] != grid[:2] or not np.allclose(p.grid[2:], grid[2:], rtol=1e-9, atol=1e-9):
            raise MaskMismatch(f"land mask grid {grid} differs from patch grid {p.grid}")
        r0, c0 = p.pixel_offset
        window = land_mask.values[r0:r0 + p.size, c0:c0 + p.size]
        out.append(float(np.count_nonzero(window > 0)) / window.size)
    return out


def passes_spatial(p: Patch, t: FilterThresholds) -> bool:
    return p.land_fraction >= t.min_land_fraction and abs(p.center[1]) <= t.max_abs_latitude


def passes_radiometric(p: Patch, t: FilterThresholds) -> bool:
    return p.mean_log1p >= t.tau_dark and p.std_log1p >= t.tau_uniform


def spatial_filter(patches: Sequence[Patch], land_mask: Raster,
                   t: FilterThresholds = FilterThresholds()) -> list[Patch]:
    annotated = [replace(p, land_fraction=f)
                 for p, f in zip(patches, land_fractions(patches, land_mask))]
    return [p for p in annotated if passes_spatial(p, t)]


def radiometric_filter(patches: Sequence[Patch],
                       t: FilterThresholds = FilterThresholds()) -> list[Patch]:
    return [p for p in patches if passes_radiometric(p, t)]


def estimate_calibration(rasters: Raster | Iterable[Raster],
                         clip_quantile: float = 0.999) -> RadiometricCalibration:
    """Clip bounds from the (1-q) and q quantiles of log1p-domain values.

    Accepts one raster or an iterable of rasters pooled into one sample.
    """
    if isinstance(rasters, Raster):
        rasters = [rasters]
    vals = np.concatenate([r.valid_values().astype(np.float64).ravel() for r in rasters])
    v_min = quantile(vals, 1.0 - clip_quantile)
    v_max = quantile(vals, clip_quantile)
    if v_max - v_min < 1e-9:
        raise DegenerateCalibration(f"v_min == v_max == {v_min}")
    return RadiometricCalibration(max(v_min, 0.0), v_max)


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Apportion ``n`` items by largest remainder; ties go to the earlier share."""
    quotas = [n * f for f in fractions]
    counts = [int(math.floor(q + 1e-12)) for q in quotas]
    rem = n - sum(counts)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:rem]:
        counts[i] += 1
    return counts


def block_assignment(blocks: Iterable[tuple[int, int]], fractions=(0.70, 0.15, 0.15),
                     seed: int = 42) -> dict[tuple[int, int], str]:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative shares summing to 1, got {fractions}")
    uniq = sorted(set(tuple(b) for b in blocks))
    if len(uniq) < 3:
        raise TooFewBlocks(f"need at least 3 geographic blocks, found {len(uniq)}")
    perm = np.random.default_rng(seed).permutation(len(uniq))
    counts = largest_remainder(len(uniq), fractions)
    labels = [s for s, c in zip(SPLITS, counts) for _ in range(c)]
    return {uniq[i]: labels[k] for k, i in enumerate(perm)}


def split_by_blocks(patches: Sequence[Patch], fractions=(0.70, 0.15, 0.15),
                    seed: int = 42) -> list[Patch]:
    assignment = block_assignment((p.geo_block for p in patches), fractions, seed)
    return [replace(p, split=assignment[p.geo_block]) for p in patches]


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class PreprocessConfig:
    patch_size: int = 64
    thresholds: FilterThresholds = FilterThresholds()
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 42

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d


@dataclass
class PairedScene:
    """One scene in both domains plus its land mask; ``truth_path`` locates raw VIIRS."""

    scene: int
    dmsp: Raster
    viirs: Raster
    land_mask: Raster
    truth_path: str | None = None


def select_pairs(scenes: Sequence[PairedScene], cfg: PreprocessConfig):
    """Run extraction and filters on every scene; return retained patch pairs and counts.

    A tile survives only when both its DMSP and VIIRS patches pass every filter.
    """
    t = cfg.thresholds
    counts = {"extracted": 0, "spatial": 0, "radiometric": 0}
    pairs = []
    for sc in scenes:
        viirs_log = log1p_transform(clamp_negative(sc.viirs))
        dmsp_log = log1p_transform(clamp_negative(sc.dmsp))
        pd = extract_patches(dmsp_log, cfg.patch_size, "DMSP", sc.scene)
        pv = extract_patches(viirs_log, cfg.patch_size, "VIIRS", sc.scene)
        counts["extracted"] += len(pd)
        fr = land_fractions(pd, sc.land_mask)
        for a, b, f in zip(pd, pv, fr):
            a = replace(a, land_fraction=f)
            b = replace(b, land_fraction=f)
            if not passes_spatial(a, t):
                continue
            counts["spatial"] += 1
            if passes_radiometric(a, t) and passes_radiometric(b, t):
                counts["radiometric"] += 1
                pairs.append((a, b, sc))
    return pairs, counts


def build_dataset(scenes: Sequence[PairedScene], out_dir, cfg: PreprocessConfig = PreprocessConfig(),
                  dry_run: bool = False) -> dict:
    """Write 8-bit patch grids, ``manifest.jsonl`` and ``dataset.json`` into ``out_dir``.

    Calibration bounds are estimated per domain from every scene pixel.
    Returns the summary that is also stored as ``dataset.json``.
    """
    from .gridio import write_grid

    pairs, counts = select_pairs(scenes, cfg)
    cal = {
        "DMSP": estimate_calibration([log1p_transform(clamp_negative(s.dmsp)) for s in scenes],
                                     cfg.thresholds.clip_quantile),
        "VIIRS": estimate_calibration([log1p_transform(clamp_negative(s.viirs)) for s in scenes],
                                      cfg.thresholds.clip_quantile),
    }
    if pairs:
        assignment = block_assignment((a.geo_block for a, _, _ in pairs), cfg.split, cfg.seed)
    else:
        assignment = {}
    split_counts = {s: 0 for s in SPLITS}
    for a, _, _ in pairs:
        split_counts[assignment[a.geo_block]] += 1
    summary = {
        "stage": "preprocess",
        "manifest_version": MANIFEST_VERSION,
        "config": cfg.to_dict(),
        "calibration": {k: v.to_dict() for k, v in cal.items()},
        "counts": {**counts, **split_counts},
        "n_blocks": len(assignment),
    }
    if dry_run:
        return summary

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for a, b, sc in pairs:
        split = assignment[a.geo_block]
        for p in (a, b):
            p = replace(p, split=split)
            rel = f"patches/{split}/{p.source_domain.lower()}/{p.pair_id}.bin"
            path = out_dir / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            codes = quantize_codes(p.data, cal[p.source_domain])
            r0, c0 = p.pixel_offset
            lon0 = p.grid[3] + c0 * p.grid[2]
            lat0 = p.grid[4] - r0 * p.grid[2]
            write_grid(path, Raster(codes, p.grid[2], (lon0, lat0)))
            rec = p.metadata()
            rec["path"] = rel
            rec["truth_path"] = sc.truth_path
            lines.append(json.dumps(rec, sort_keys=True))
    (out_dir / "manifest.jsonl").write_text("".join(line + "\n" for line in lines))
    (out_dir / "dataset.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("dataset: %s", summary["counts"])
    return summary
