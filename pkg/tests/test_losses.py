import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntlcut.errors import DegenerateSamples
from ntlcut.losses import (LossWeights, lsgan_d_loss, lsgan_g_loss, lsgan_losses, nce_layer_loss,
                           patch_nce_loss, total_loss)
from ntlcut.nn import Tensor, flip
from ntlcut.cut import ProjectionHeads, sample_patch_embeddings

import oracles


def unit(a):
    a = np.asarray(a, dtype=np.float64)
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


class TestLsgan:
    def test_perfect_discriminator(self):
        assert float(lsgan_d_loss(Tensor(np.ones(4)), Tensor(np.zeros(4))).data) == 0.0

    def test_half_everywhere(self):
        h = Tensor(np.full(4, 0.5))
        assert float(lsgan_d_loss(h, h).data) == pytest.approx(0.25)

    def test_generator_zero_iff_one(self):
        assert float(lsgan_g_loss(Tensor(np.ones(3))).data) == 0.0
        assert float(lsgan_g_loss(Tensor(np.array([1.0, 0.9]))).data) > 0.0

    def test_fake_detached_for_d(self):
        fake = Tensor(np.full((1, 1, 2, 2), 0.3), requires_grad=True)
        real = Tensor(np.ones((1, 1, 2, 2)))
        w = Tensor(np.array(2.0), requires_grad=True)
        ld, lg = lsgan_losses(lambda z: z * w, real, fake)
        ld.backward()
        assert fake.grad is None and w.grad is not None


class TestPatchNce:
    def test_identical_embeddings(self):
        e = np.tile(unit(np.ones(8)), (256, 1))
        assert float(nce_layer_loss(Tensor(e), Tensor(e), 0.07).data) == pytest.approx(math.log(256), abs=1e-12)

    def test_orthogonal_negatives(self):
        # positive similarity 1, every negative similarity 0
        tau, n = 0.07, 255
        q = np.eye(256)
        got = float(nce_layer_loss(Tensor(q), Tensor(q), tau).data)
        closed = -math.log(math.exp(1 / tau) / (math.exp(1 / tau) + n))
        assert got == pytest.approx(closed, abs=1e-9)
        assert closed == pytest.approx(math.log1p(n * math.exp(-1 / tau)), rel=1e-12)
        assert closed == pytest.approx(1.5933e-4, rel=1e-3)

    def test_brute_force_8_patches(self):
        r = np.random.default_rng(0)
        q, k = unit(r.normal(size=(8, 4))), unit(r.normal(size=(8, 4)))
        got = float(nce_layer_loss(Tensor(q), Tensor(k), 0.07).data)
        assert got == pytest.approx(oracles.nce_layer_oracle(q, k, 0.07), abs=1e-6)

    def test_batched_and_summed_over_layers(self):
        r = np.random.default_rng(1)
        layers = [(unit(r.normal(size=(2, 6, 5))), unit(r.normal(size=(2, 6, 5)))) for _ in range(3)]
        got = float(patch_nce_loss([(Tensor(q), Tensor(k)) for q, k in layers]).data)
        expect = sum((oracles.nce_layer_oracle(q[0], k[0], 0.07) +
                      oracles.nce_layer_oracle(q[1], k[1], 0.07)) / 2 for q, k in layers)
        assert got == pytest.approx(expect, abs=1e-9)

    def test_degenerate(self):
        with pytest.raises(DegenerateSamples):
            nce_layer_loss(Tensor(np.ones((1, 4))), Tensor(np.ones((1, 4))), 0.07)
        with pytest.raises(DegenerateSamples):
            patch_nce_loss([])

    @given(st.integers(0, 2**31), st.integers(2, 12), st.integers(2, 8))
    def test_non_negative(self, seed, p, d):
        r = np.random.default_rng(seed)
        q, k = unit(r.normal(size=(p, d))), unit(r.normal(size=(p, d)))
        assert float(nce_layer_loss(Tensor(q), Tensor(k), 0.07).data) >= 0

    def test_approaches_zero(self):
        # positives aligned, negatives antipodal
        q = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert float(nce_layer_loss(Tensor(q), Tensor(q), 0.07).data) < 1e-10

    def test_gradients_reach_queries_and_keys(self):
        r = np.random.default_rng(2)
        q = Tensor(unit(r.normal(size=(5, 3))), requires_grad=True)
        k = Tensor(unit(r.normal(size=(5, 3))), requires_grad=True)
        nce_layer_loss(q, k, 0.07).backward()
        assert np.abs(q.grad).sum() > 0 and np.abs(k.grad).sum() > 0

    def test_flip_with_index_frame(self):
        """Mirroring the feature maps and the sampled positions leaves the loss bit-identical."""
        r = np.random.default_rng(3)
        heads = ProjectionHeads([3, 3], 8, r)
        fx = [Tensor(r.normal(size=(2, 3, 6, 6))) for _ in range(2)]
        fy = [Tensor(r.normal(size=(2, 3, 6, 6))) for _ in range(2)]
        idx = [r.permutation(36)[:10] for _ in range(2)]
        a = patch_nce_loss(sample_patch_embeddings(fx, fy, heads, 10, indices=idx))
        mirrored = [(i // 6) * 6 + (5 - i % 6) for i in idx]
        b = patch_nce_loss(sample_patch_embeddings([flip(f, 3) for f in fx], [flip(f, 3) for f in fy],
                                                   heads, 10, indices=mirrored))
        assert float(a.data) == float(b.data)


class TestTotal:
    def test_weights(self):
        assert total_loss(0.4, 0.6) == pytest.approx(1.0)
        assert total_loss(0.4, 0.6, LossWeights.fast()) == pytest.approx(6.4)
        assert total_loss(0.4, 0.6, LossWeights(0.0, 0.0)) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            LossWeights(tau=0)
        with pytest.raises(ValueError):
            LossWeights(lambda_gan=-1)
        assert LossWeights().num_patches == 256


@pytest.fixture(scope="module")
def tiny_setup():
    from tiny import tiny_losses, tiny_model

    m = tiny_model(seed=0)
    g, d, x = tiny_losses(m, seed=0)
    return m, g, d, x


class TestTinyModelGradients:
    """Autodiff against central differences through the whole loss, at 64 bits."""

    def test_heads_and_input(self, tiny_setup):
        from tiny import kink_aware_check

        m, g, _, x = tiny_setup
        worst, checked, _ = kink_aware_check(g, m.heads.parameters() + [x])
        assert checked > 0 and worst < 1e-3

    def test_discriminator(self, tiny_setup):
        from tiny import kink_aware_check

        m, _, d, _ = tiny_setup
        worst, checked, _ = kink_aware_check(d, m.discriminator.parameters())
        assert checked > 0 and worst < 1e-3
