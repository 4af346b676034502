"""Alternating discriminator / generator optimization for unpaired DMSP to VIIRS translation."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cut import CutModel, DiscriminatorConfig, GeneratorConfig, sample_patch_embeddings
from .errors import NonFiniteLoss, SpecError, StageError
from .gridio import read_grid
from .losses import LossWeights, lsgan_d_loss, lsgan_g_loss, patch_nce_loss, total_loss
from .nn import Adam, Tensor, checkpoint, linear_decay_lr, no_grad
from .preprocess import MANIFEST_VERSION

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("iteration", "epoch", "loss_gan_g", "loss_gan_d", "loss_nce", "lr")


@dataclass
class TrainConfig:
    seed: int = 42
    epochs_constant: int = 15
    epochs_decay: int = 15
    batch_size: int = 4
    patch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    nce_layers: tuple[int, ...] = (0, 4, 8, 10, 12)
    num_patches: int = 256
    tau: float = 0.07
    feature_dim: int = 256
    gan_mode: str = "lsgan"
    init_std: float = 0.02
    lambda_gan: float = 1.0
    lambda_nce: float = 1.0
    base_filters: int = 16
    n_resblocks: int = 4
    norm: str = "batch"
    upsample: str = "transpose"
    disc_filters: int = 16
    disc_padding: int = 1
    flip_prob: float = 0.5
    save_every: int = 5
    val_bins: int = 64
    val_patches: int = 32
    max_iterations: int | None = None

    def __post_init__(self):
        self.nce_layers = tuple(int(i) for i in self.nce_layers)
        if self.gan_mode != "lsgan":
            raise SpecError(f"only gan_mode='lsgan' is implemented, got {self.gan_mode!r}")
        if self.batch_size < 1 or self.epochs_constant < 0 or self.epochs_decay < 0:
            raise SpecError("batch_size must be >= 1 and epoch counts >= 0")

    @property
    def epochs(self) -> int:
        return self.epochs_constant + self.epochs_decay

    @classmethod
    def desk(cls, **kw) -> TrainConfig:
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> TrainConfig:
        base = dict(epochs_constant=200, epochs_decay=200, patch_size=256,
                    nce_layers=(0, 4, 8, 12, 16), base_filters=64, n_resblocks=9,
                    disc_filters=64, disc_padding=0)
        base.update(kw)
        return cls(**base)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(base_filters=self.base_filters, n_resblocks=self.n_resblocks,
                               norm=self.norm, upsample=self.upsample,
                               nce_layer_ids=self.nce_layers, init_std=self.init_std)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(base_filters=self.disc_filters, padding=self.disc_padding,
                                   norm=self.norm, init_std=self.init_std)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_gan, self.lambda_nce, self.tau, self.num_patches - 1)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["nce_layers"] = list(self.nce_layers)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> TrainConfig:
        path = Path(path)
        text = path.read_text()
        d = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        d = d.get("train", d)
        return cls.from_dict(d)

    def with_overrides(self, overrides: dict[str, str]) -> TrainConfig:
        """Apply ``key=value`` string overrides, parsing each value as JSON when possible."""
        d = self.to_dict()
        for k, v in overrides.items():
            if k not in d:
                raise SpecError(f"unknown training config key {k!r}")
            try:
                d[k] = json.loads(v) if isinstance(v, str) else v
            except json.JSONDecodeError:
                d[k] = v
        return TrainConfig.from_dict(d)


# -- data ---------------------------------------------------------------------

def codes_to_unit(codes: np.ndarray) -> np.ndarray:
    """uint8 codes 0..255 -> float32 in [-1, 1]."""
    return (codes.astype(np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def unit_to_codes(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def read_manifest(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    if not path.exists():
        raise StageError(f"no manifest at {path}; run the preprocess stage first")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def dataset_root(manifest_path) -> Path:
    p = Path(manifest_path)
    return p if p.is_dir() else p.parent


@dataclass
class PatchPool:
    """Stacked uint8 patches of one split and domain, in manifest order."""

    records: list[dict]
    codes: np.ndarray                      # (N, H, W) uint8

    def __len__(self) -> int:
        return len(self.records)

    def batch(self, idx: np.ndarray) -> np.ndarray:
        return codes_to_unit(self.codes[idx])[:, None]


def load_pool(manifest_path, split: str, domain: str) -> PatchPool:
    root = dataset_root(manifest_path)
    recs = [r for r in read_manifest(manifest_path)
            if r["split"] == split and r["source_domain"] == domain]
    if not recs:
        return PatchPool([], np.zeros((0, 0, 0), dtype=np.uint8))
    codes = np.stack([read_grid(root / r["path"]).values for r in recs])
    return PatchPool(recs, codes)


def hflip_batch(x: np.ndarray, flags: np.ndarray) -> np.ndarray:
    out = x.copy()
    out[flags] = out[flags, ..., ::-1]
    return out


def histogram_distance(a_codes: np.ndarray, b_codes: np.ndarray, bins: int = 64) -> float:
    """Mean absolute difference of normalized histograms over 0..255."""
    ha, _ = np.histogram(a_codes, bins=bins, range=(0, 256))
    hb, _ = np.histogram(b_codes, bins=bins, range=(0, 256))
    return float(np.abs(ha / max(ha.sum(), 1) - hb / max(hb.sum(), 1)).mean())


# -- state ----------------------------------------------------------------------

@dataclass
class TrainState:
    epoch: int = 0
    iteration: int = 0
    seed: int = 42
    best_val: float | None = None
    best_epoch: int | None = None
    history: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "iteration": self.iteration, "seed": self.seed,
                "best_val": self.best_val, "best_epoch": self.best_epoch}


class Trainer:
    def __init__(self, cfg: TrainConfig, manifest_path, out_dir):
        self.cfg = cfg
        self.manifest_path = Path(manifest_path)
        self.out_dir = Path(out_dir)
        self.model = CutModel.build(cfg.generator_config(), cfg.discriminator_config(),
                                    cfg.feature_dim, cfg.seed)
        m = self.model
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = Adam(m.generator.parameters(), cfg.lr, betas)
        self.opt_f = Adam(m.heads.parameters(), cfg.lr, betas)
        self.opt_d = Adam(m.discriminator.parameters(), cfg.lr, betas)
        self.weights = cfg.loss_weights()
        self.state = TrainState(seed=cfg.seed)
        self.train_x = load_pool(manifest_path, "train", "DMSP")
        self.train_y = load_pool(manifest_path, "train", "VIIRS")
        if not len(self.train_x) or not len(self.train_y):
            raise StageError("manifest has no training patches for one of the domains")
        if self.train_x.codes.shape[1:] != (cfg.patch_size, cfg.patch_size):
            log.warning("patch size in manifest %s differs from config %d",
                        self.train_x.codes.shape[1:], cfg.patch_size)
        self.val_x = load_pool(manifest_path, "val", "DMSP")
        self.val_y = load_pool(manifest_path, "val", "VIIRS")

    # -- single step ---------------------------------------------------------
    def step(self, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> dict[str, float]:
        """One discriminator update followed by one generator + heads update."""
        m, cfg = self.model, self.cfg
        G, D, H = m.generator, m.discriminator, m.heads
        real_x, real_y = Tensor(x), Tensor(y)

        fake, feats_x = G(real_x)

        D.requires_grad_(True)
        loss_d = lsgan_d_loss(D(real_y), D(fake.detach()))
        if not np.isfinite(loss_d.data):
            raise NonFiniteLoss(self.state.iteration + 1, {"loss_gan_d": float(loss_d.data)})
        self.opt_d.zero_grad()
        loss_d.backward()
        self.opt_d.step()

        D.requires_grad_(False)
        loss_g = lsgan_g_loss(D(fake))
        _, feats_y = G.encode(fake)
        samples = sample_patch_embeddings(feats_x, feats_y, H, cfg.num_patches, rng,
                                          layer_ids=cfg.nce_layers)
        loss_nce = patch_nce_loss(samples, self.weights)
        loss = total_loss(loss_g, loss_nce, self.weights)
        values = {"loss_gan_g": float(loss_g.data), "loss_gan_d": float(loss_d.data),
                  "loss_nce": float(loss_nce.data)}
        if not all(np.isfinite(v) for v in values.values()):
            raise NonFiniteLoss(self.state.iteration + 1, values)
        self.opt_g.zero_grad()
        self.opt_f.zero_grad()
        loss.backward()
        self.opt_g.step()
        self.opt_f.step()
        D.requires_grad_(True)
        return values

    # -- validation -------------------------------------------------------------
    def validate(self) -> float | None:
        n = min(len(self.val_x), self.cfg.val_patches)
        if n == 0 or not len(self.val_y):
            return None
        G = self.model.generator
        G.eval()
        with no_grad():
            outs = [unit_to_codes(G(Tensor(self.val_x.batch(np.arange(i, min(i + 8, n)))))[0].data)
                    for i in range(0, n, 8)]
        G.train()
        return histogram_distance(np.concatenate(outs), self.val_y.codes[:n], self.cfg.val_bins)

    # -- persistence --------------------------------------------------------------
    def _ckpt_dir(self) -> Path:
        return self.out_dir / "checkpoints"

    def full_state(self) -> dict[str, np.ndarray]:
        d = dict(self.model.state_dict())
        d.update(self.opt_g.state_dict("opt_g."))
        d.update(self.opt_f.state_dict("opt_f."))
        d.update(self.opt_d.state_dict("opt_d."))
        return d

    def save_state(self) -> None:
        ck = self._ckpt_dir()
        ck.mkdir(parents=True, exist_ok=True)
        checkpoint.save(ck / "latest_state.bin", self.full_state())
        (self.out_dir / "train_state.json").write_text(
            json.dumps(self.state.to_json(), indent=2, sort_keys=True) + "\n")

    def restore(self) -> bool:
        sp = self.out_dir / "train_state.json"
        cp = self._ckpt_dir() / "latest_state.bin"
        if not (sp.exists() and cp.exists()):
            return False
        st = json.loads(sp.read_text())
        arrays = checkpoint.load(cp)
        self.model.load_state_dict(arrays)
        self.opt_g.load_state_dict(arrays, "opt_g.")
        self.opt_f.load_state_dict(arrays, "opt_f.")
        self.opt_d.load_state_dict(arrays, "opt_d.")
        self.state = TrainState(st["epoch"], st["iteration"], st["seed"], st["best_val"],
                                st["best_epoch"])
        log.info("resumed after epoch %d (iteration %d)", self.state.epoch, self.state.iteration)
        return True

    def save_weights(self, name: str) -> Path:
        ck = self._ckpt_dir()
        ck.mkdir(parents=True, exist_ok=True)
        path = ck / name
        checkpoint.save(path, self.model.state_dict())
        return path

    # -- loop -------------------------------------------------------------------
    def run(self, resume: bool = False,
            on_epoch: Callable[[int, dict], None] | None = None) -> TrainState:
        cfg = self.cfg
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "train_config.json").write_text(self.to_config_json() + "\n")
        (self.out_dir / "model_config.json").write_text(self.model.config_json() + "\n")
        csv_path = self.out_dir / "losses.csv"
        if not (resume and self.restore()):
            with csv_path.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(LOSS_COLUMNS)
        else:
            _truncate_log(csv_path, self.state.iteration)

        nx, ny, B = len(self.train_x), len(self.train_y), cfg.batch_size
        n_batches = max(1, nx // B)
        for epoch in range(self.state.epoch + 1, cfg.epochs + 1):
            lr = linear_decay_lr(epoch, cfg.lr, cfg.epochs_constant, cfg.epochs_decay)
            for opt in (self.opt_g, self.opt_f, self.opt_d):
                opt.lr = lr
            rng = np.random.default_rng([cfg.seed, epoch])
            order_x = rng.permutation(nx)
            order_y = rng.integers(0, ny, size=n_batches * B)
            sums = {k: 0.0 for k in LOSS_COLUMNS[2:5]}
            done = 0
            with csv_path.open("a", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                for b in range(n_batches):
                    if cfg.max_iterations is not None and self.state.iteration >= cfg.max_iterations:
                        break
                    ix = order_x[b * B:(b + 1) * B]
                    iy = order_y[b * B:(b + 1) * B]
                    x = hflip_batch(self.train_x.batch(ix), rng.random(len(ix)) < cfg.flip_prob)
                    y = hflip_batch(self.train_y.batch(iy), rng.random(len(iy)) < cfg.flip_prob)
                    try:
                        vals = self.step(x, y, rng)
                    except NonFiniteLoss as e:
                        log.error("aborting: %s", e)
                        raise
                    self.state.iteration += 1
                    done += 1
                    for k in sums:
                        sums[k] += vals[k]
                    writer.writerow([self.state.iteration, epoch] +
                                    [f"{vals[k]:.9g}" for k in LOSS_COLUMNS[2:5]] + [f"{lr:.9g}"])
            self.state.epoch = epoch
            val = self.validate()
            if val is not None and (self.state.best_val is None or val < self.state.best_val):
                self.state.best_val, self.state.best_epoch = val, epoch
                self.save_weights("best.bin")
            if epoch % cfg.save_every == 0 or epoch == cfg.epochs:
                self.save_weights(f"epoch_{epoch:04d}.bin")
            self.save_state()
            means = {k: v / max(done, 1) for k, v in sums.items()}
            log.info("epoch %d/%d lr=%.3g %s val=%s", epoch, cfg.epochs, lr,
                     " ".join(f"{k}={v:.4f}" for k, v in means.items()), val)
            if on_epoch is not None:
                on_epoch(epoch, {**means, "val": val, "lr": lr})
            if cfg.max_iterations is not None and self.state.iteration >= cfg.max_iterations:
                break
        if not (self._ckpt_dir() / "best.bin").exists():
            self.save_weights("best.bin")
        self.save_weights("final.bin")
        return self.state

    def to_config_json(self) -> str:
        """Resolved-config snapshot, in the same layout every pipeline stage writes."""
        d = self.cfg.to_dict()
        d["manifest"] = str(self.manifest_path)
        doc = {"command": "train", "manifest_version": MANIFEST_VERSION, "resolved": d}
        return json.dumps(doc, indent=2, sort_keys=True)


def _truncate_log(csv_path: Path, iteration: int) -> None:
    """Drop rows beyond ``iteration`` so a resumed run appends cleanly."""
    rows = csv_path.read_text().splitlines()
    kept = [rows[0]] + [r for r in rows[1:] if int(r.split(",", 1)[0]) <= iteration]
    csv_path.write_text("".join(r + "\n" for r in kept))


def train(cfg: TrainConfig, manifest_path, out_dir, resume: bool = False) -> TrainState:
    return Trainer(cfg, manifest_path, out_dir).run(resume=resume)


def read_loss_log(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in LOSS_COLUMNS}


def load_generator(checkpoint_path, model_config: dict | None = None):
    """Rebuild a CUT model from ``model_config.json`` beside the checkpoint directory."""
    checkpoint_path = Path(checkpoint_path)
    if model_config is None:
        cfg_path = checkpoint_path.parent.parent / "model_config.json"
        if not cfg_path.exists():
            raise StageError(f"no model_config.json found for {checkpoint_path}")
        model_config = json.loads(cfg_path.read_text())
    m = CutModel.from_config(model_config)
    m.load_state_dict(checkpoint.load(checkpoint_path))
    return m
