"""CUT networks: ResNet generator, PatchGAN discriminator and projection heads.

Generator layer indexing (used by ``nce_layer_ids``)::

    0            input (identity)
    1, 2, 3      7x7 reflect-padded conv, norm, ReLU
    4, 5, 6      first stride-2 conv, norm, ReLU
    7, 8, 9      second stride-2 conv, norm, ReLU
    10 ...       residual blocks, one index each
    then the decoder (not available for feature capture)

With the full-scale preset's nine residual blocks, ids (0, 4, 8, 12, 16) select the
input, the first downsampling conv, the second downsampling norm and the
outputs of residual blocks 3 and 7.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .errors import ShapeError, TooFewLocations
from .nn import functional as F
from .nn.tensor import Tensor, reshape, take, transpose


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 1
    out_channels: int = 1
    base_filters: int = 16
    n_resblocks: int = 4
    n_downsample: int = 2
    padding: str = "reflect"
    norm: str = "batch"
    upsample: str = "transpose"            # or "nearest"
    nce_layer_ids: tuple[int, ...] = (0, 4, 8, 10, 12)
    init_std: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "nce_layer_ids", tuple(int(i) for i in self.nce_layer_ids))
        n_enc = self.n_encoder_layers
        bad = [i for i in self.nce_layer_ids if not 0 <= i < n_enc]
        if bad:
            raise ValueError(f"nce_layer_ids {bad} outside encoder layers 0..{n_enc - 1}")
        if self.upsample not in ("transpose", "nearest"):
            raise ValueError(f"unknown upsample mode {self.upsample!r}")

    @property
    def n_encoder_layers(self) -> int:
        return 4 + 3 * self.n_downsample + self.n_resblocks

    @classmethod
    def full(cls, **kw) -> GeneratorConfig:
        base = dict(base_filters=64, n_resblocks=9, nce_layer_ids=(0, 4, 8, 12, 16))
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 1
    base_filters: int = 16
    n_layers: int = 3
    kernel: int = 4
    padding: int = 1
    norm: str = "batch"
    slope: float = 0.2
    init_std: float = 0.02

    @classmethod
    def full(cls, **kw) -> DiscriminatorConfig:
        base = dict(base_filters=64, padding=0)
        base.update(kw)
        return cls(**base)

    def filters(self) -> list[int]:
        """Output channels of every conv, final score conv included."""
        out = [self.base_filters * min(2 ** i, 8) for i in range(self.n_layers)]
        out.append(self.base_filters * min(2 ** self.n_layers, 8))
        return out + [1]

    def strides(self) -> list[int]:
        return [2] * self.n_layers + [1, 1]


def receptive_field(cfg: DiscriminatorConfig) -> int:
    rf = 1
    for s in reversed(cfg.strides()):
        rf = rf * s + (cfg.kernel - s)
    return rf


class ResnetBlock(nn.Module):
    def __init__(self, ch: int, norm: str, padding: str, rng, init_std: float):
        super().__init__()
        bias = norm == "instance"
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, rng, padding=1, padding_mode=padding, bias=bias, init_std=init_std),
            nn.Norm2d(ch, norm, rng, init_std=init_std),
            nn.ReLU(),
            nn.Conv2d(ch, ch, 3, rng, padding=1, padding_mode=padding, bias=bias, init_std=init_std),
            nn.Norm2d(ch, norm, rng, init_std=init_std),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        nf, pad, norm, std = cfg.base_filters, cfg.padding, cfg.norm, cfg.init_std
        bias = norm == "instance"
        layers: list[nn.Module] = [
            nn.Identity(),
            nn.Conv2d(cfg.in_channels, nf, 7, rng, padding=3, padding_mode=pad, bias=bias,
                      init_std=std),
            nn.Norm2d(nf, norm, rng, init_std=std),
            nn.ReLU(),
        ]
        ch = nf
        for _ in range(cfg.n_downsample):
            layers += [
                nn.Conv2d(ch, ch * 2, 3, rng, stride=2, padding=1, bias=bias, init_std=std),
                nn.Norm2d(ch * 2, norm, rng, init_std=std),
                nn.ReLU(),
            ]
            ch *= 2
        layers += [ResnetBlock(ch, norm, pad, rng, std) for _ in range(cfg.n_resblocks)]
        self.encoder = nn.Sequential(*layers)
        dec: list[nn.Module] = []
        for _ in range(cfg.n_downsample):
            if cfg.upsample == "transpose":
                dec.append(nn.ConvTranspose2d(ch, ch // 2, 3, rng, stride=2, padding=1,
                                              output_padding=1, bias=bias, init_std=std))
            else:
                dec.append(nn.UpsampleConv(ch, ch // 2, rng, bias=bias, init_std=std))
            dec += [nn.Norm2d(ch // 2, norm, rng, init_std=std), nn.ReLU()]
            ch //= 2
        dec += [
            nn.Conv2d(ch, cfg.out_channels, 7, rng, padding=3, padding_mode=pad, init_std=std),
            nn.Tanh(),
        ]
        self.decoder = nn.Sequential(*dec)

    def _check(self, x: Tensor):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"generator expects (B, {self.cfg.in_channels}, H, W), got {x.shape}")
        m = 2 ** self.cfg.n_downsample
        if x.shape[2] % m or x.shape[3] % m:
            raise ShapeError(f"H and W must be divisible by {m}, got {x.shape[2:]}")

    def encode(self, x: Tensor, layer_ids: Sequence[int] | None = None):
        """Run the encoder; return (encoding, [features at layer_ids in order])."""
        self._check(x)
        layer_ids = self.cfg.nce_layer_ids if layer_ids is None else tuple(layer_ids)
        wanted = set(layer_ids)
        captured = {}
        h = x
        for i, layer in enumerate(self.encoder.layers):
            h = layer(h)
            if i in wanted:
                captured[i] = h
        return h, [captured[i] for i in layer_ids]

    def forward(self, x: Tensor, layer_ids: Sequence[int] | None = None):
        h, feats = self.encode(x, layer_ids)
        return self.decoder(h), feats


class Discriminator(nn.Module):
    """PatchGAN: stride-2 conv stages, a stride-1 stage and a 1-channel score conv."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(), rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(1)
        self.cfg = cfg
        filters, strides = cfg.filters(), cfg.strides()
        k, p, std = cfg.kernel, cfg.padding, cfg.init_std
        layers: list[nn.Module] = []
        ch = cfg.in_channels
        for i, (f, s) in enumerate(zip(filters, strides)):
            last = i == len(filters) - 1
            use_norm = 0 < i and not last
            layers.append(nn.Conv2d(ch, f, k, rng, stride=s, padding=p,
                                    bias=not use_norm or cfg.norm == "instance", init_std=std))
            if use_norm:
                layers.append(nn.Norm2d(f, cfg.norm, rng, init_std=std))
            if not last:
                layers.append(nn.LeakyReLU(cfg.slope))
            ch = f
        self.model = nn.Sequential(*layers)

    def output_size(self, n: int) -> int:
        for s in self.cfg.strides():
            n = (n + 2 * self.cfg.padding - self.cfg.kernel) // s + 1
        return n

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"discriminator expects (B, {self.cfg.in_channels}, H, W), got {x.shape}")
        if min(self.output_size(x.shape[2]), self.output_size(x.shape[3])) < 1:
            raise ShapeError(f"input {x.shape[2:]} too small for the discriminator")
        return self.model(x)


class ProjectionHeads(nn.Module):
    """One two-layer MLP per NCE layer: L2Norm(Linear(ReLU(Linear(h))))."""

    def __init__(self, in_channels: Sequence[int], embed_dim: int = 256, rng=None,
                 init_std: float = 0.02):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(2)
        self.embed_dim = embed_dim
        self.n_heads = len(in_channels)
        for i, c in enumerate(in_channels):
            setattr(self, f"mlp{i}", nn.Sequential(
                nn.Linear(c, embed_dim, rng, init_std=init_std),
                nn.ReLU(),
                nn.Linear(embed_dim, embed_dim, rng, init_std=init_std),
            ))

    def head(self, i: int) -> nn.Module:
        return getattr(self, f"mlp{i}")

    def project(self, i: int, x: Tensor) -> Tensor:
        return F.l2_normalize(self.head(i)(x), axis=-1)


def encoder_channels(cfg: GeneratorConfig) -> list[int]:
    chans = [cfg.in_channels, cfg.base_filters, cfg.base_filters, cfg.base_filters]
    ch = cfg.base_filters
    for _ in range(cfg.n_downsample):
        ch *= 2
        chans += [ch, ch, ch]
    chans += [ch] * cfg.n_resblocks
    return [chans[i] for i in cfg.nce_layer_ids]


@dataclass
class PatchSampleSet:
    layer_id: int
    spatial_indices: np.ndarray            # (P, 2) rows of (h, w)
    query_embeds: Tensor                   # (B, P, D) from the generated image
    positive_embeds: Tensor                # (B, P, D) from the input image
    fallback: bool = False


def sample_locations(h: int, w: int, num_patches: int, rng: np.random.Generator):
    """Uniform sampling without replacement of flat positions in an h x w map.

    Returns (flat indices, fallback flag). When the map has fewer than
    ``num_patches`` positions every position is used and the flag is set.
    """
    n = h * w
    if n < num_patches:
        return rng.permutation(n), True
    return rng.permutation(n)[:num_patches], False


def _gather(feat: Tensor, flat_idx: np.ndarray) -> Tensor:
    B, C, H, W = feat.shape
    flat = reshape(feat, (B, C, H * W))
    picked = take(flat, flat_idx, axis=2)            # (B, C, P)
    return transpose(picked, (0, 2, 1))              # (B, P, C)


def sample_patch_embeddings(features_x: Sequence[Tensor], features_yhat: Sequence[Tensor],
                            heads: ProjectionHeads, num_patches: int = 256,
                            rng: np.random.Generator | None = None,
                            layer_ids: Sequence[int] | None = None,
                            indices: Sequence[np.ndarray] | None = None,
                            strict: bool = False) -> list[PatchSampleSet]:
    """Project co-located feature vectors of the input and generated images.

    One index set is drawn per layer and reused for both feature maps and
    for every image in the batch. Pass ``indices`` (flat positions per
    layer) to reuse a previous draw. With ``strict`` a layer with fewer
    positions than ``num_patches`` raises TooFewLocations instead of falling
    back to all positions.
    """
    if len(features_x) != len(features_yhat):
        raise ShapeError("feature lists differ in length")
    rng = rng if rng is not None else np.random.default_rng(0)
    layer_ids = list(layer_ids) if layer_ids is not None else list(range(len(features_x)))
    out = []
    for i, (fx, fy) in enumerate(zip(features_x, features_yhat)):
        if fx.shape != fy.shape:
            raise ShapeError(f"layer {layer_ids[i]}: feature shapes {fx.shape} != {fy.shape}")
        H, W = fx.shape[2], fx.shape[3]
        if indices is not None:
            flat_idx, fallback = np.asarray(indices[i], dtype=np.intp), False
        else:
            flat_idx, fallback = sample_locations(H, W, num_patches, rng)
            if fallback and strict:
                raise TooFewLocations(f"layer {layer_ids[i]} has {H * W} < {num_patches} positions")
        q = heads.project(i, _gather(fy, flat_idx))
        k = heads.project(i, _gather(fx, flat_idx))
        hw = np.stack(np.unravel_index(flat_idx, (H, W)), axis=1)
        out.append(PatchSampleSet(layer_ids[i], hw, q, k, fallback))
    return out


@dataclass
class CutModel:
    generator: Generator
    discriminator: Discriminator
    heads: ProjectionHeads
    gen_cfg: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc_cfg: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    embed_dim: int = 256

    @classmethod
    def build(cls, gen_cfg: GeneratorConfig = GeneratorConfig(),
              disc_cfg: DiscriminatorConfig = DiscriminatorConfig(), embed_dim: int = 256,
              seed: int = 42) -> CutModel:
        ss = np.random.SeedSequence(seed).spawn(3)
        g = Generator(gen_cfg, np.random.default_rng(ss[0]))
        d = Discriminator(disc_cfg, np.random.default_rng(ss[1]))
        h = ProjectionHeads(encoder_channels(gen_cfg), embed_dim, np.random.default_rng(ss[2]),
                            gen_cfg.init_std)
        return cls(g, d, h, gen_cfg, disc_cfg, embed_dim)

    def config_dict(self) -> dict:
        g = asdict(self.gen_cfg)
        g["nce_layer_ids"] = list(self.gen_cfg.nce_layer_ids)
        return {"generator": g, "discriminator": asdict(self.disc_cfg), "embed_dim": self.embed_dim}

    def config_json(self) -> str:
        return json.dumps(self.config_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_config(cls, cfg: dict, seed: int = 42) -> CutModel:
        return cls.build(GeneratorConfig(**cfg["generator"]),
                         DiscriminatorConfig(**cfg["discriminator"]),
                         int(cfg.get("embed_dim", 256)), seed)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, m in (("G.", self.generator), ("D.", self.discriminator), ("F.", self.heads)):
            out.update({prefix + k: v for k, v in m.state_dict().items()})
        return out

    def load_state_dict(self, state: dict) -> None:
        for prefix, m in (("G.", self.generator), ("D.", self.discriminator), ("F.", self.heads)):
            m.load_state_dict({k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)})

    def astype(self, dtype) -> CutModel:
        for m in (self.generator, self.discriminator, self.heads):
            m.astype(dtype)
        return self
