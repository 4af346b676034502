"""Adversarial (least-squares) and patchwise contrastive losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateSamples, ShapeError
from .nn import functional as F
from .nn.tensor import Tensor, as_tensor, matmul, mul, reshape, transpose


@dataclass(frozen=True)
class LossWeights:
    lambda_gan: float = 1.0
    lambda_nce: float = 1.0
    tau: float = 0.07
    num_negatives: int = 255

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lambda_gan < 0 or self.lambda_nce < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def fast(cls, **kw) -> LossWeights:
        return cls(lambda_nce=10.0, **kw)

    @property
    def num_patches(self) -> int:
        return self.num_negatives + 1


def lsgan_d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    return 0.5 * F.mse_to(d_real, 1.0) + 0.5 * F.mse_to(d_fake, 0.0)


def lsgan_g_loss(d_fake: Tensor) -> Tensor:
    return 0.5 * F.mse_to(d_fake, 1.0)


def lsgan_losses(D, real: Tensor, fake: Tensor) -> tuple[Tensor, Tensor]:
    """(loss_D, loss_G). The D loss sees ``fake`` detached."""
    if real.shape != fake.shape:
        raise ShapeError(f"real {real.shape} and fake {fake.shape} differ")
    loss_d = lsgan_d_loss(D(real), D(fake.detach()))
    loss_g = lsgan_g_loss(D(fake))
    return loss_d, loss_g


def nce_logits(q: Tensor, k: Tensor, tau: float) -> Tensor:
    """(B, P, P) similarity logits; row i scores query i against every key."""
    return mul(matmul(q, transpose(k, (0, 2, 1))), 1.0 / tau)


def nce_layer_loss(q: Tensor, k: Tensor, tau: float) -> Tensor:
    """Mean over queries of the cross-entropy with the co-located key as target."""
    if q.shape != k.shape or q.ndim not in (2, 3):
        raise ShapeError(f"query {q.shape} and key {k.shape} must match as (B, P, D) or (P, D)")
    if q.ndim == 2:
        q = reshape(q, (1,) + q.shape)
        k = reshape(k, (1,) + k.shape)
    B, P, _ = q.shape
    if P < 2:
        raise DegenerateSamples(f"need at least 2 patches, got {P}")
    logits = reshape(nce_logits(q, k, tau), (B * P, P))
    targets = np.tile(np.arange(P), B)
    return F.cross_entropy(logits, targets)


def patch_nce_loss(samples: Sequence, weights: LossWeights = LossWeights()) -> Tensor:
    """Contrastive loss summed over layers, each averaged over its queries.

    ``samples`` holds objects with ``query_embeds`` and ``positive_embeds``
    (see ``cut.PatchSampleSet``) or plain (query, key) pairs.
    """
    total = None
    for s in samples:
        q, k = (s.query_embeds, s.positive_embeds) if hasattr(s, "query_embeds") else s
        term = nce_layer_loss(as_tensor(q), as_tensor(k), weights.tau)
        total = term if total is None else total + term
    if total is None:
        raise DegenerateSamples("no layers to average")
    return total


def total_loss(gan_g, nce, weights: LossWeights = LossWeights()):
    return weights.lambda_gan * gan_g + weights.lambda_nce * nce
