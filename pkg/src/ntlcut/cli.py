"""Command-line pipeline: synth, preprocess, train, infer, eval, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from .errors import NtlError, SpecError, StageError
from .preprocess import MANIFEST_VERSION

log = logging.getLogger("ntlcut")

STAGE_FILES = {"synth": "synth.json", "preprocess": "dataset.json", "eval": "report.json"}


# -- config plumbing --------------------------------------------------------------

def load_config_file(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise SpecError(f"config file not found: {path}")
    if path.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        return tomllib.loads(path.read_text())
    return json.loads(path.read_text())


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise SpecError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(v: str):
    try:
        return json.loads(v)
    except json.JSONDecodeError:
        return v


def resolve(args, section: str, defaults: dict) -> dict:
    """defaults < config file section < explicit CLI flags < key=value overrides."""
    cfg = dict(defaults)
    file_cfg = load_config_file(args.config).get(section, {})
    unknown = set(file_cfg) - set(cfg)
    if unknown:
        raise SpecError(f"unknown keys in [{section}]: {sorted(unknown)}")
    cfg.update(file_cfg)
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    for k, v in parse_overrides(args.override).items():
        if k not in cfg:
            raise SpecError(f"unknown {section} key {k!r}")
        cfg[k] = _coerce(v)
    if args.seed is not None and "seed" in cfg:
        cfg["seed"] = args.seed
    return cfg


def write_snapshot(out_dir: Path, command: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "manifest_version": MANIFEST_VERSION, "resolved": resolved}
    (out_dir / f"{command}_config.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def require_stage(directory: Path, stage: str) -> dict:
    """Read and validate the stage file another subcommand left in ``directory``."""
    f = Path(directory) / STAGE_FILES[stage]
    if not f.exists():
        raise StageError(f"{directory} has no {STAGE_FILES[stage]}; run `ntlcut {stage}` first")
    doc = json.loads(f.read_text())
    if doc.get("stage") != stage:
        raise StageError(f"{f} was written by stage {doc.get('stage')!r}, expected {stage!r}")
    if doc.get("manifest_version", MANIFEST_VERSION) != MANIFEST_VERSION:
        raise StageError(f"{f} has manifest version {doc.get('manifest_version')}, "
                         f"this tool reads version {MANIFEST_VERSION}")
    return doc


def _dataset_dir(manifest: Path) -> Path:
    return manifest.parent if manifest.suffix == ".jsonl" else manifest


def _out(args, default: str) -> Path:
    return Path(args.out_dir) if args.out_dir else Path(default)


# -- synth ---------------------------------------------------------------------------

SYNTH_DEFAULTS = dict(n_scenes=200, width=128, height=128, n_cities=4, peak_min=10.0,
                      peak_max=250.0, n_roads=3, noise_sigma=0.2, speckle_sigma=0.1,
                      blur_sigma=1.0, k=30.0, seed=42, format="tif")


def cmd_synth(args) -> int:
    from .gridio import write_raster
    from .synth import DegradeParams, generate_pair, scene_specs

    cfg = resolve(args, "synth", SYNTH_DEFAULTS)
    out = _out(args, "runs/raw")
    if cfg["format"] not in ("tif", "bin"):
        raise SpecError("format must be 'tif' or 'bin'")
    if cfg["n_scenes"] < 0:
        raise SpecError("n_scenes must be >= 0")
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    write_snapshot(out, "synth", cfg)
    params = DegradeParams(blur_sigma=cfg["blur_sigma"], k=cfg["k"])
    specs = scene_specs(cfg["n_scenes"], cfg["seed"], cfg["width"], cfg["height"],
                        n_cities=cfg["n_cities"], city_peak_range=(cfg["peak_min"], cfg["peak_max"]),
                        n_roads=cfg["n_roads"], background_noise_sigma=cfg["noise_sigma"],
                        speckle_sigma=cfg["speckle_sigma"])
    lines = []
    ext = cfg["format"]
    for i, spec in enumerate(specs):
        pair = generate_pair(spec, params)
        for domain, r in (("VIIRS", pair.viirs), ("DMSP", pair.dmsp), ("LAND", pair.land_mask)):
            rel = f"scenes/{domain.lower()}_{i:05d}.{ext}"
            write_raster(out / rel, r)
            lines.append(json.dumps({"scene": i, "seed": spec.seed, "domain": domain, "path": rel},
                                    sort_keys=True))
    (out / "scenes.jsonl").write_text("".join(line + "\n" for line in lines))
    summary = {"stage": "synth", "manifest_version": MANIFEST_VERSION, "n_scenes": len(specs),
               "degrade": {"blur_sigma": params.blur_sigma, "k": params.k, "factor": params.factor},
               "specs": [s.to_dict() for s in specs]}
    (out / "synth.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d scenes to %s", len(specs), out)
    return 0


# -- preprocess -------------------------------------------------------------------------

PREPROCESS_DEFAULTS = dict(patch_size=64, min_land=0.30, max_lat=60.0, tau_dark=0.1,
                           tau_uniform=0.05, clip_q=0.999, split="70,15,15", seed=42)


def _parse_split(s) -> tuple[float, float, float]:
    parts = [float(p) for p in (s.split(",") if isinstance(s, str) else s)]
    if len(parts) != 3 or min(parts) < 0 or sum(parts) <= 0:
        raise SpecError(f"--split needs three non-negative numbers, got {s!r}")
    total = sum(parts)
    return tuple(p / total for p in parts)


def _scenes_from_raw(raw: Path, dataset_dir: Path):
    from .gridio import read_raster
    from .preprocess import PairedScene

    require_stage(raw, "synth")
    recs = [json.loads(x) for x in (raw / "scenes.jsonl").read_text().splitlines() if x.strip()]
    by_scene: dict[int, dict[str, str]] = {}
    for r in recs:
        by_scene.setdefault(r["scene"], {})[r["domain"]] = r["path"]
    scenes = []
    for i in sorted(by_scene):
        files = by_scene[i]
        if "LAND" not in files:
            raise SpecError(f"scene {i} has no land mask; supply one with --land-mask")
        scenes.append(PairedScene(i, read_raster(raw / files["DMSP"]), read_raster(raw / files["VIIRS"]),
                                  read_raster(raw / files["LAND"]),
                                  _relative(raw / files["VIIRS"], dataset_dir)))
    return scenes


def _relative(path: Path, start: Path) -> str:
    return os.path.relpath(Path(path).resolve(), Path(start).resolve())


def cmd_preprocess(args) -> int:
    from .gridio import read_raster
    from .preprocess import FilterThresholds, PairedScene, PreprocessConfig, build_dataset

    cfg = resolve(args, "preprocess", PREPROCESS_DEFAULTS)
    thresholds = FilterThresholds(min_land_fraction=cfg["min_land"], max_abs_latitude=cfg["max_lat"],
                                  tau_dark=cfg["tau_dark"], tau_uniform=cfg["tau_uniform"],
                                  clip_quantile=cfg["clip_q"])
    pcfg = PreprocessConfig(cfg["patch_size"], thresholds, _parse_split(cfg["split"]), cfg["seed"])
    out = _out(args, "runs/data")
    if args.dmsp or args.viirs:
        if not (args.dmsp and args.viirs):
            raise SpecError("--dmsp and --viirs must be given together")
        if not args.land_mask:
            raise SpecError("missing land mask: pass --land-mask PATH")
        scenes = [PairedScene(0, read_raster(args.dmsp), read_raster(args.viirs),
                              read_raster(args.land_mask), _relative(args.viirs, out))]
    else:
        if not args.raw:
            raise SpecError("give a synth output directory or --dmsp/--viirs/--land-mask")
        scenes = _scenes_from_raw(Path(args.raw), out)
    summary = build_dataset(scenes, out, pcfg, dry_run=args.dry_run)
    if args.dry_run:
        print(json.dumps(summary["counts"], sort_keys=True))
        return 0
    write_snapshot(out, "preprocess", {**cfg, "raw": args.raw, "dmsp": args.dmsp,
                                       "viirs": args.viirs, "land_mask": args.land_mask})
    return 0


# -- train ---------------------------------------------------------------------------------

def _train_config(args):
    from .train import TrainConfig

    preset = TrainConfig.full() if args.preset == "full" else TrainConfig.desk()
    d = preset.to_dict()
    d.update(load_config_file(args.config).get("train", {}))
    if args.epochs is not None:
        half = args.epochs // 2
        d["epochs_constant"], d["epochs_decay"] = args.epochs - half, half
    if args.batch_size is not None:
        d["batch_size"] = args.batch_size
    if args.seed is not None:
        d["seed"] = args.seed
    cfg = TrainConfig.from_dict(d)
    return cfg.with_overrides(parse_overrides(args.override))


def cmd_train(args) -> int:
    from .train import Trainer

    manifest = Path(args.manifest)
    require_stage(_dataset_dir(manifest), "preprocess")
    cfg = _train_config(args)
    out = _out(args, "runs/train")
    # the trainer writes train_config.json itself, so direct library runs get one too
    state = Trainer(cfg, manifest, out).run(resume=args.resume)
    log.info("finished at epoch %d, iteration %d (best epoch %s)", state.epoch, state.iteration,
             state.best_epoch)
    return 0


# -- infer ---------------------------------------------------------------------------------

def cmd_infer(args) -> int:
    from .evaluate import load_calibration
    from .gridio import read_raster
    from .infer import infer_raster, write_outputs
    from .train import load_generator

    manifest = Path(args.manifest)
    require_stage(_dataset_dir(manifest), "preprocess")
    cal = load_calibration(manifest)
    model = load_generator(args.checkpoint)
    out = _out(args, "runs/infer")
    write_snapshot(out, "infer", {"checkpoint": args.checkpoint, "manifest": str(manifest),
                                  "inputs": args.inputs, "overlap": args.overlap,
                                  "patch_size": args.patch_size})
    index = []
    for path in args.inputs:
        src = read_raster(path)
        r, info = infer_raster(model.generator, src, cal["DMSP"], cal["VIIRS"], args.patch_size,
                               args.overlap)
        tif, grid = write_outputs(r, out / (Path(path).stem + "_calibrated"))
        index.append({"input": str(path), "geotiff": tif.name, "grid": grid.name, **info.to_dict()})
    (out / "outputs.jsonl").write_text("".join(json.dumps(x, sort_keys=True) + "\n" for x in index))
    return 0


# -- eval ------------------------------------------------------------------------------------

def cmd_eval(args) -> int:
    from .evaluate import evaluate_run, generator_predictor, identity_predictor
    from .train import load_generator

    manifest = Path(args.manifest)
    require_stage(_dataset_dir(manifest), "preprocess")
    out = _out(args, "runs/eval")
    edges = [float(e) for e in args.edges.split(",")] if args.edges else None
    kw = {} if edges is None else {"edges": edges}
    if args.model == "identity":
        rep = evaluate_run(identity_predictor, manifest, out, args.split, density_bins=args.bins,
                           truth_source="codes", method="identity", baselines=False,
                           inputs="VIIRS", **kw)
    else:
        if not args.checkpoint:
            raise SpecError("--checkpoint is required unless --model identity")
        model = load_generator(args.checkpoint)
        rep = evaluate_run(generator_predictor(model.generator), manifest, out, args.split,
                           density_bins=args.bins, baselines=not args.no_baselines, **kw)
    write_snapshot(out, "eval", {"checkpoint": args.checkpoint, "manifest": str(manifest),
                                 "bins": args.bins, "split": args.split, "model": args.model})
    print(json.dumps({"method": rep.method, "r_squared": rep.r_squared, "ssim_mean": rep.ssim_mean}))
    return 0


# -- report ------------------------------------------------------------------------------------

def cmd_report(args) -> int:
    from .report import render_report

    eval_dir = Path(args.eval_dir)
    require_stage(eval_dir, "eval")
    out = _out(args, str(eval_dir))
    md, html = render_report(eval_dir, out, args.train_dir)
    write_snapshot(out, "report", {"eval_dir": str(eval_dir), "train_dir": args.train_dir})
    print(md)
    return 0


# -- parser ------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="JSON or TOML file with per-subcommand sections")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, help="BLAS thread limit")
    g.add_argument("--out-dir")
    g.add_argument("--log-level", default="INFO",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    g.add_argument("-o", "--override", action="append", metavar="KEY=VALUE",
                   help="override one resolved config key (repeatable)")

    p = argparse.ArgumentParser(prog="ntlcut", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate paired synthetic scenes")
    s.add_argument("--n-scenes", dest="n_scenes", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--n-cities", dest="n_cities", type=int)
    s.add_argument("--peak-min", dest="peak_min", type=float)
    s.add_argument("--peak-max", dest="peak_max", type=float)
    s.add_argument("--n-roads", dest="n_roads", type=int)
    s.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    s.add_argument("--blur-sigma", dest="blur_sigma", type=float)
    s.add_argument("--k", type=float, help="saturation half-point of the DMSP response")
    s.add_argument("--format", choices=["tif", "bin"])
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", parents=[common], help="extract, filter and split patches")
    s.add_argument("raw", nargs="?", help="directory written by `ntlcut synth`")
    s.add_argument("--dmsp", help="single DMSP-like raster (with --viirs and --land-mask)")
    s.add_argument("--viirs")
    s.add_argument("--land-mask", dest="land_mask")
    s.add_argument("--patch-size", dest="patch_size", type=int)
    s.add_argument("--min-land", dest="min_land", type=float)
    s.add_argument("--max-lat", dest="max_lat", type=float)
    s.add_argument("--tau-dark", dest="tau_dark", type=float)
    s.add_argument("--tau-uniform", dest="tau_uniform", type=float)
    s.add_argument("--clip-q", dest="clip_q", type=float)
    s.add_argument("--split", help="train,val,test percentages, e.g. 70,15,15")
    s.add_argument("--dry-run", action="store_true", help="print counts without writing")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", parents=[common], help="train the CUT model")
    s.add_argument("--manifest", required=True, help="dataset directory or manifest.jsonl")
    s.add_argument("--preset", choices=["desk", "full"], default="desk")
    s.add_argument("--epochs", type=int, help="total epochs, split evenly into constant and decay")
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="calibrate full rasters")
    s.add_argument("inputs", nargs="+", help="DMSP-like rasters (.tif or .bin)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True, help="dataset whose calibration to apply")
    s.add_argument("--patch-size", dest="patch_size", type=int, default=64)
    s.add_argument("--overlap", action="store_true", help="blend half-overlapping tiles")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="metrics against paired truth")
    s.add_argument("--checkpoint")
    s.add_argument("--manifest", required=True)
    s.add_argument("--bins", type=int, default=512, help="density grid size")
    s.add_argument("--edges", help="stratification edges, e.g. 0,20,40,60,80,inf")
    s.add_argument("--split", default="test")
    s.add_argument("--model", choices=["generator", "identity"], default="generator")
    s.add_argument("--no-baselines", dest="no_baselines", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="render Markdown/HTML summary")
    s.add_argument("--eval-dir", dest="eval_dir", required=True)
    s.add_argument("--train-dir", dest="train_dir")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=args.threads)
    else:
        limiter = nullcontext()
    try:
        with limiter:
            return args.func(args)
    except (NtlError, ValueError, OSError, KeyError) as e:
        print(f"ntlcut {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
