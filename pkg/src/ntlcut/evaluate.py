"""Patchwise evaluation of a generator against paired synthetic truth."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import metrics as M
from .errors import ManifestMismatch, StageError
from .gridio import read_raster
from .nn import Tensor, no_grad
from .raster import RadiometricCalibration, clamp_negative, dequantize_codes
from .train import codes_to_unit, dataset_root, read_manifest, unit_to_codes

log = logging.getLogger(__name__)

Predictor = Callable[[np.ndarray], np.ndarray]     # DMSP codes (N,H,W) -> VIIRS codes (N,H,W)


@dataclass
class EvalData:
    pair_ids: list[str]
    dmsp_codes: np.ndarray        # (N, H, W) uint8
    viirs_codes: np.ndarray       # (N, H, W) uint8
    truth: np.ndarray             # (N, H, W) float64 radiance
    cal_dmsp: RadiometricCalibration
    cal_viirs: RadiometricCalibration


def load_calibration(manifest_path) -> dict[str, RadiometricCalibration]:
    ds = dataset_root(manifest_path) / "dataset.json"
    if not ds.exists():
        raise StageError(f"missing {ds}; run the preprocess stage first")
    info = json.loads(ds.read_text())
    return {k: RadiometricCalibration.from_dict(v) for k, v in info["calibration"].items()}


def _pairs(manifest_path, split: str) -> tuple[list[dict], list[dict]]:
    recs = [r for r in read_manifest(manifest_path) if r["split"] == split]
    dm = {r["pair_id"]: r for r in recs if r["source_domain"] == "DMSP"}
    vi = {r["pair_id"]: r for r in recs if r["source_domain"] == "VIIRS"}
    if set(dm) != set(vi):
        missing = sorted(set(dm) ^ set(vi))[:5]
        raise ManifestMismatch(f"{split}: DMSP and VIIRS patch sets differ, e.g. {missing}")
    ids = sorted(dm)
    return [dm[i] for i in ids], [vi[i] for i in ids]


def load_eval_data(manifest_path, split: str = "test", truth_source: str = "raw") -> EvalData:
    """Collect paired patches and their truth radiance.

    ``truth_source="raw"`` cuts truth from the full-resolution VIIRS scene named
    by ``truth_path``; ``"codes"`` uses the dequantized VIIRS patch instead.
    """
    from .gridio import read_grid

    root = dataset_root(manifest_path)
    cal = load_calibration(manifest_path)
    dm, vi = _pairs(manifest_path, split)
    if not dm:
        raise ManifestMismatch(f"no {split} patches in manifest")
    dcodes = np.stack([read_grid(root / r["path"]).values for r in dm])
    vcodes = np.stack([read_grid(root / r["path"]).values for r in vi])
    if truth_source == "codes":
        truth = np.expm1(dequantize_codes(vcodes, cal["VIIRS"]).astype(np.float64))
    elif truth_source == "raw":
        cache: dict[str, np.ndarray] = {}
        truth = np.empty(vcodes.shape, dtype=np.float64)
        for i, r in enumerate(vi):
            tp = r.get("truth_path")
            if not tp:
                raise ManifestMismatch(f"{r['pair_id']} has no truth_path")
            if tp not in cache:
                p = Path(tp) if Path(tp).is_absolute() else root / tp
                cache[tp] = clamp_negative(read_raster(p)).values.astype(np.float64)
            r0, c0 = r["pixel_offset"]
            s = r["size"]
            tile = cache[tp][r0:r0 + s, c0:c0 + s]
            if tile.shape != vcodes.shape[1:]:
                raise ManifestMismatch(f"{r['pair_id']}: truth tile {tile.shape} != patch {vcodes.shape[1:]}")
            truth[i] = tile
    else:
        raise ValueError(f"unknown truth_source {truth_source!r}")
    return EvalData([r["pair_id"] for r in dm], dcodes, vcodes, truth, cal["DMSP"], cal["VIIRS"])


def generator_predictor(generator, batch: int = 8) -> Predictor:
    def run(codes: np.ndarray) -> np.ndarray:
        was_training = generator.training
        generator.eval()
        outs = []
        with no_grad():
            for i in range(0, len(codes), batch):
                x = Tensor(codes_to_unit(codes[i:i + batch])[:, None])
                outs.append(unit_to_codes(generator(x)[0].data[:, 0]))
        generator.train(was_training)
        return np.concatenate(outs) if outs else np.zeros_like(codes)
    return run


def codes_to_radiance(codes: np.ndarray, cal: RadiometricCalibration) -> np.ndarray:
    return np.maximum(np.expm1(dequantize_codes(codes, cal).astype(np.float64)), 0.0)


# -- report -------------------------------------------------------------------------

@dataclass
class MetricsReport:
    method: str
    n_patches: int
    n_pixels: int
    pearson_r: float | None
    spearman_rho: float | None
    r_squared: float | None
    ccc: float | None
    mae: float
    rmse: float
    ssim_mean: float
    ssim_std: float
    stratified: list[dict] = field(default_factory=list)
    per_method: list[dict] = field(default_factory=list)

    def summary_row(self) -> dict:
        return {"method": self.method, "r_squared": self.r_squared, "pearson_r": self.pearson_r,
                "spearman_rho": self.spearman_rho, "ccc": self.ccc, "mae": self.mae,
                "rmse": self.rmse, "ssim_mean": self.ssim_mean, "ssim_std": self.ssim_std}

    def to_dict(self) -> dict:
        d = self.summary_row()
        d.update(n_patches=self.n_patches, n_pixels=self.n_pixels, stratified=self.stratified,
                 per_method=self.per_method)
        return d


def patch_ssim(pred: np.ndarray, truth: np.ndarray, data_range: float,
               window: int = 11) -> np.ndarray:
    """SSIM per patch on log1p radiance, with a shared dynamic range."""
    pl, tl = np.log1p(pred), np.log1p(truth)
    return np.array([M.ssim(p, t, window=window, data_range=data_range) for p, t in zip(pl, tl)])


def evaluate_predictions(pred: np.ndarray, truth: np.ndarray, method: str = "model",
                         edges: Sequence[float] = M.DEFAULT_EDGES,
                         ssim_range: float | None = None) -> MetricsReport:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ManifestMismatch(f"prediction {pred.shape} and truth {truth.shape} differ")
    if ssim_range is None:
        lt = np.log1p(truth)
        ssim_range = float(lt.max() - lt.min())
    s = patch_ssim(pred, truth, ssim_range)
    p, t = pred.ravel(), truth.ravel()
    rows = M.stratified_errors(p, t, edges)
    return MetricsReport(
        method=method, n_patches=int(pred.shape[0]), n_pixels=int(p.size),
        pearson_r=M.safe(M.pearson, p, t), spearman_rho=M.safe(M.spearman, p, t),
        r_squared=M.safe(M.r_squared, p, t), ccc=M.safe(M.ccc, p, t),
        mae=M.mae(p, t), rmse=M.rmse(p, t), ssim_mean=float(s.mean()), ssim_std=float(s.std()),
        stratified=[r.to_dict() for r in rows],
    )


# -- baselines ------------------------------------------------------------------------

def fit_baselines(manifest_path, split: str = "train", truth_source: str = "raw"):
    """Fit the linear (log1p space) and histogram-matching baselines on one split."""
    d = load_eval_data(manifest_path, split, truth_source)
    x_log = dequantize_codes(d.dmsp_codes, d.cal_dmsp).astype(np.float64)
    lin = M.baseline_linear(x_log.ravel(), np.log1p(d.truth).ravel())
    hm = M.HistogramMatcher.fit(d.viirs_codes)
    return lin, hm


def baseline_predictions(data: EvalData, lin: M.LinearBaseline, hm: M.HistogramMatcher):
    x_log = dequantize_codes(data.dmsp_codes, data.cal_dmsp).astype(np.float64)
    return {
        "linear_regression": lin.predict(x_log),
        "histogram_matching": codes_to_radiance(hm(data.dmsp_codes), data.cal_viirs),
    }


# -- full run -------------------------------------------------------------------------

def evaluate_run(predictor: Predictor | None, manifest_path, out_dir=None, split: str = "test",
                 edges: Sequence[float] = M.DEFAULT_EDGES, density_bins: int = 512,
                 truth_source: str = "raw", method: str = "cut", baselines: bool = True,
                 inputs: str = "DMSP", extra: dict[str, Predictor] | None = None) -> MetricsReport:
    """Evaluate ``predictor`` (and the baselines) on ``split``; optionally write artifacts.

    ``inputs="VIIRS"`` feeds the VIIRS patches instead, used with an identity
    predictor to check the wiring end to end.
    """
    data = load_eval_data(manifest_path, split, truth_source)
    lt = np.log1p(data.truth)
    ssim_range = float(lt.max() - lt.min())
    src = data.dmsp_codes if inputs == "DMSP" else data.viirs_codes
    preds: dict[str, np.ndarray] = {}
    if predictor is not None:
        codes = predictor(src)
        if codes.shape != src.shape:
            raise ManifestMismatch(f"predictor returned {codes.shape}, expected {src.shape}")
        preds[method] = codes_to_radiance(codes, data.cal_viirs)
    for name, fn in (extra or {}).items():
        preds[name] = codes_to_radiance(fn(src), data.cal_viirs)
    if baselines:
        lin, hm = fit_baselines(manifest_path, "train", truth_source)
        preds.update(baseline_predictions(data, lin, hm))
    reports = {k: evaluate_predictions(v, data.truth, k, edges, ssim_range) for k, v in preds.items()}
    main = reports[method] if method in reports else next(iter(reports.values()))
    main.per_method = [r.summary_row() for r in reports.values()]
    if out_dir is not None:
        write_report(main, reports, preds.get(main.method), data.truth, Path(out_dir), density_bins)
    return main


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6g}"


def write_report(main: MetricsReport, reports: dict[str, MetricsReport], pred, truth,
                 out_dir: Path, density_bins: int = 512) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = main.to_dict()
    doc["methods"] = {k: r.to_dict() for k, r in reports.items()}
    doc["stage"] = "eval"
    (out_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    with (out_dir / "stratified.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["radiance_range", "pixel_count", "mae", "rmse", "r2"])
        for r in main.stratified:
            w.writerow([r["range"], r["pixel_count"], _fmt(r["mae"]), _fmt(r["rmse"]), _fmt(r["r2"])])
    with (out_dir / "methods.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["method", "r_squared", "pearson_r", "spearman_rho", "ccc", "mae", "rmse", "ssim_mean"]
        w.writerow(cols)
        for r in main.per_method:
            w.writerow([r["method"]] + [_fmt(r[c]) for c in cols[1:]])
    if pred is not None:
        grid, vmax = M.density_grid(truth, pred, density_bins)
        np.savetxt(out_dir / "density.csv", grid, fmt="%.6g", delimiter=",")
        (out_dir / "density.json").write_text(json.dumps(
            {"bins": density_bins, "axis": "log1p radiance", "rows": "truth", "cols": "prediction",
             "vmax": vmax, "value": "log10(1+count)"}, indent=2) + "\n")


def identity_predictor(codes: np.ndarray) -> np.ndarray:
    return np.asarray(codes)

