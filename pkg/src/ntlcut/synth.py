"""Synthetic paired nighttime-light scenes.

A VIIRS-like scene is rendered from Gaussian city blobs, dim road segments,
multiplicative speckle and additive background noise. The DMSP-like twin is
derived from it by coarsening, blurring, saturating compression to 6-bit DN
and upsampling back to the fine grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import SpecError
from .raster import Raster, bilinear_resize

VIIRS_MAX_RADIANCE = 85588.98
DMSP_MAX_DN = 63
FINE_PIXEL_SIZE = 0.0041666667


@dataclass(frozen=True)
class City:
    row: float
    col: float
    peak: float
    radius: float
    aspect: float = 1.0
    angle: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    width: int = 128
    height: int = 128
    n_cities: int = 4
    city_radius_range: tuple[float, float] = (2.0, 7.0)
    city_peak_range: tuple[float, float] = (10.0, 250.0)
    n_roads: int = 3
    road_radiance: float = 3.0
    background_noise_sigma: float = 0.2
    speckle_sigma: float = 0.1
    land_fraction: float = 0.8
    pixel_size: float = FINE_PIXEL_SIZE
    origin: tuple[float, float] = (0.0, 0.0)
    cities: tuple[City, ...] | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SpecError(f"scene dimensions must be positive, got {self.width}x{self.height}")
        lo, hi = self.city_peak_range
        if not 0 <= lo <= hi <= VIIRS_MAX_RADIANCE:
            raise SpecError(f"city_peak_range must lie within [0, {VIIRS_MAX_RADIANCE}]")
        rlo, rhi = self.city_radius_range
        if not 0 < rlo <= rhi:
            raise SpecError("city_radius_range must be positive and ordered")
        if not 0.0 <= self.land_fraction <= 1.0:
            raise SpecError("land_fraction must lie in [0, 1]")
        if min(self.n_cities, self.n_roads) < 0 or self.background_noise_sigma < 0 \
                or self.speckle_sigma < 0:
            raise SpecError("counts and noise levels must be non-negative")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "cities"}
        d["city_radius_range"] = list(self.city_radius_range)
        d["city_peak_range"] = list(self.city_peak_range)
        d["origin"] = list(self.origin)
        if self.cities is not None:
            d["cities"] = [vars(c) for c in self.cities]
        return d


@dataclass(frozen=True)
class DegradeParams:
    blur_sigma: float = 1.0
    k: float = 30.0
    factor: int = 2


@dataclass
class ScenePair:
    viirs: Raster
    dmsp: Raster
    land_mask: Raster
    spec: SceneSpec
    meta: dict = field(default_factory=dict)


def _rngs(seed: int):
    # independent streams so that changing one ingredient leaves the others intact
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(5)]


def land_mask(spec: SceneSpec) -> Raster:
    """Binary land mask whose land pixel count is round(land_fraction * N)."""
    rng = _rngs(spec.seed)[0]
    n = spec.width * spec.height
    n_land = int(round(spec.land_fraction * n))
    field_ = rng.standard_normal((spec.height, spec.width))
    field_ = ndimage.gaussian_filter(field_, sigma=max(spec.width, spec.height) / 8, mode="wrap")
    order = np.argsort(-field_.ravel(), kind="stable")
    mask = np.zeros(n, dtype=np.float32)
    mask[order[:n_land]] = 1.0
    return Raster(mask.reshape(spec.height, spec.width), spec.pixel_size, spec.origin)


def sample_cities(spec: SceneSpec, land: np.ndarray) -> tuple[City, ...]:
    if spec.cities is not None:
        return tuple(spec.cities)
    rng = _rngs(spec.seed)[1]
    rows, cols = np.nonzero(land > 0)
    if rows.size == 0:
        rows, cols = np.indices(land.shape).reshape(2, -1)
    cities = []
    for _ in range(spec.n_cities):
        i = rng.integers(rows.size)
        # log-uniform peaks: many small towns, few bright cores
        lo, hi = spec.city_peak_range
        peak = float(np.exp(rng.uniform(np.log(max(lo, 1e-3)), np.log(max(hi, 1e-3)))))
        cities.append(City(
            row=float(rows[i]) + rng.uniform(-0.5, 0.5),
            col=float(cols[i]) + rng.uniform(-0.5, 0.5),
            peak=peak,
            radius=float(rng.uniform(*spec.city_radius_range)),
            aspect=float(rng.uniform(0.5, 1.0)),
            angle=float(rng.uniform(0, math.pi)),
        ))
    return tuple(cities)


def render_city(shape: tuple[int, int], city: City) -> np.ndarray:
    """Anisotropic Gaussian blob; ``radius`` is the major-axis standard deviation."""
    rr, cc = np.indices(shape, dtype=np.float64)
    dr, dc = rr - city.row, cc - city.col
    ca, sa = math.cos(city.angle), math.sin(city.angle)
    u = ca * dc + sa * dr
    v = -sa * dc + ca * dr
    su = city.radius
    sv = city.radius * city.aspect
    return city.peak * np.exp(-0.5 * ((u / su) ** 2 + (v / sv) ** 2))


def render_segment(shape: tuple[int, int], p0, p1, radiance: float, width: float = 0.7):
    rr, cc = np.indices(shape, dtype=np.float64)
    (r0, c0), (r1, c1) = p0, p1
    dr, dc = r1 - r0, c1 - c0
    length2 = dr * dr + dc * dc
    if length2 == 0:
        t = np.zeros(shape)
    else:
        t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / length2, 0.0, 1.0)
    d2 = (rr - (r0 + t * dr)) ** 2 + (cc - (c0 + t * dc)) ** 2
    return radiance * np.exp(-0.5 * d2 / width ** 2)


def generate_viirs_like(spec: SceneSpec) -> Raster:
    shape = (spec.height, spec.width)
    _, _, road_rng, speckle_rng, noise_rng = _rngs(spec.seed)
    land = land_mask(spec).values
    cities = sample_cities(spec, land)
    scene = np.zeros(shape, dtype=np.float64)
    for c in cities:
        scene += render_city(shape, c)
    roads = np.zeros(shape, dtype=np.float64)
    anchors = [(c.row, c.col) for c in cities]
    for _ in range(spec.n_roads):
        # roads join cities where possible, else run between random points
        if len(anchors) >= 2:
            a, b = road_rng.choice(len(anchors), size=2, replace=False)
            p0, p1 = anchors[a], anchors[b]
        else:
            p0 = tuple(road_rng.uniform(0, shape))
            p1 = tuple(road_rng.uniform(0, shape))
        roads = np.maximum(roads, render_segment(shape, p0, p1, spec.road_radiance))
    scene += roads * land
    if spec.speckle_sigma > 0:
        s = spec.speckle_sigma
        scene *= np.exp(s * speckle_rng.standard_normal(shape) - 0.5 * s * s)
    if spec.background_noise_sigma > 0:
        scene += spec.background_noise_sigma * noise_rng.standard_normal(shape)
    scene = np.maximum(scene, 0.0)
    return Raster(scene.astype(np.float32), spec.pixel_size, spec.origin)


def saturating_map(x: np.ndarray, k: float = 30.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return DMSP_MAX_DN * x / (x + k)


def dmsp_dn(viirs: Raster, params: DegradeParams = DegradeParams()) -> np.ndarray:
    """Coarse-grid DMSP digital numbers (integers 0..63) before upsampling."""
    f = params.factor
    v = np.maximum(viirs.values.astype(np.float64), 0.0)
    h, w = v.shape
    ph, pw = (-h) % f, (-w) % f
    if ph or pw:
        v = np.pad(v, ((0, ph), (0, pw)), mode="edge")
    coarse = v.reshape(v.shape[0] // f, f, v.shape[1] // f, f).mean(axis=(1, 3))
    if params.blur_sigma > 0:
        coarse = ndimage.gaussian_filter(coarse, params.blur_sigma, mode="reflect")
    dn = np.rint(saturating_map(coarse, params.k))
    return np.clip(dn, 0, DMSP_MAX_DN)


def degrade_to_dmsp_like(viirs: Raster, params: DegradeParams = DegradeParams()) -> Raster:
    dn = dmsp_dn(viirs, params)
    f = params.factor
    up = bilinear_resize(dn, dn.shape[0] * f, dn.shape[1] * f)
    up = up[: viirs.height, : viirs.width]
    return Raster(up.astype(np.float32), viirs.pixel_size, viirs.origin)


def generate_pair(spec: SceneSpec, params: DegradeParams = DegradeParams()) -> ScenePair:
    viirs = generate_viirs_like(spec)
    return ScenePair(viirs, degrade_to_dmsp_like(viirs, params), land_mask(spec), spec)


def scene_specs(n_scenes: int, seed: int, width: int = 128, height: int = 128,
                block_deg: float = 5.0, **overrides) -> list[SceneSpec]:
    """Specs for a batch of scenes, each placed in its own geographic block.

    Scenes are laid out west to east on 5 degree rows, starting at 55N and
    moving south, so every scene falls in a distinct block and all centers
    sit below 60 degrees latitude. Land fraction varies per scene.
    """
    rng = np.random.default_rng(seed)
    per_row = int(360 // block_deg)
    specs = []
    for i in range(n_scenes):
        row, col = divmod(i, per_row)
        lon0 = -180.0 + col * block_deg + 1.0
        lat0 = 55.0 - row * block_deg + 4.0
        kw = dict(
            seed=int(rng.integers(2**63 - 1)),
            width=width,
            height=height,
            land_fraction=float(np.round(rng.uniform(0.2, 1.0), 3)),
            origin=(lon0, lat0),
        )
        kw.update(overrides)
        specs.append(SceneSpec(**kw))
    return specs
