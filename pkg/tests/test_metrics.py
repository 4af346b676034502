import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ntlcut import metrics as M
from ntlcut.errors import DomainError, ShapeError, SingularFit, WindowTooLarge, ZeroVariance

import oracles


def random_pairs(n=100, seed=0):
    r = np.random.default_rng(seed)
    for i in range(n):
        size = int(r.integers(5, 60))
        x = r.normal(size=size)
        y = 0.6 * x + r.normal(size=size) * r.uniform(0.1, 2)
        if i % 3 == 0:  # ties
            x, y = np.round(x, 1), np.round(y, 1)
        yield x, y


class TestOracles:
    @pytest.mark.parametrize("name", ["pearson", "spearman", "r_squared", "ccc"])
    def test_against_naive_formula(self, name):
        for x, y in random_pairs():
            assert getattr(M, name)(x, y) == pytest.approx(getattr(oracles, name)(x, y), abs=1e-6)

    def test_ccc_bounded_by_abs_pearson(self):
        for x, y in random_pairs():
            assert M.ccc(x, y) <= abs(M.pearson(x, y)) + 1e-12

    def test_ssim_against_window_oracle(self):
        r = np.random.default_rng(1)
        for _ in range(100):
            a = r.uniform(0, 5, (16, 16))
            b = a + r.normal(0, r.uniform(0.1, 2), (16, 16))
            assert M.ssim(a, b) == pytest.approx(oracles.ssim(a, b), abs=1e-6)

    def test_ssim_8x8_fixture(self):
        r = np.random.default_rng(2)
        a, b = r.uniform(size=(8, 8)), r.uniform(size=(8, 8))
        assert M.ssim(a, b, window=7) == pytest.approx(oracles.ssim(a, b, window=7), abs=1e-6)


class TestExamples:
    def test_identity(self):
        x = np.array([1.0, 2.5, 3.0, 7.0])
        assert M.pearson(x, x) == M.spearman(x, x) == M.r_squared(x, x) == M.ccc(x, x) == 1.0

    def test_affine(self):
        x = np.arange(10.0)
        y = 2 * x + 3
        assert M.pearson(x, y) == pytest.approx(1.0)
        assert M.spearman(x, y) == pytest.approx(1.0)
        assert M.ccc(x, y) < 1
        assert M.r_squared(x, y) < 0.5

    def test_spearman_hand_example(self):
        assert M.spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            M.pearson([1, 1, 1], [1, 2, 3])
        with pytest.raises(ZeroVariance):
            M.r_squared([1, 2, 3], [2, 2, 2])
        assert M.safe(M.pearson, [1, 1], [1, 2]) is None

    def test_input_checks(self):
        with pytest.raises(ShapeError):
            M.pearson([1, 2], [1, 2, 3])
        with pytest.raises(DomainError):
            M.pearson([1, np.nan], [1, 2])

    def test_ssim(self):
        r = np.random.default_rng(3)
        a = r.uniform(size=(16, 16))
        assert M.ssim(a, a) == 1.0
        assert M.ssim(a, np.full_like(a, 0.5)) < 1
        b = r.uniform(size=(16, 16))
        assert M.ssim(a, b) == M.ssim(b, a)
        with pytest.raises(WindowTooLarge):
            M.ssim(a[:8, :8], b[:8, :8])


@given(st.integers(0, 2**31))
def test_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=20), r.normal(size=20)
    p = r.permutation(20)
    for f in (M.pearson, M.spearman, M.r_squared, M.ccc):
        assert f(x[p], y[p]) == pytest.approx(f(x, y), abs=1e-12)


@given(st.integers(0, 2**31))
def test_spearman_monotone_invariance(seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=30), r.normal(size=30)
    assert M.spearman(np.exp(x), y ** 3) == pytest.approx(M.spearman(x, y), abs=1e-12)


@given(arrays(np.float64, (12, 12), elements=st.floats(0, 10)),
       arrays(np.float64, (12, 12), elements=st.floats(0, 10)))
def test_ssim_range(a, b):
    v = M.ssim(a, b, window=7, data_range=10.0)
    assert -1 <= v <= 1 + 1e-12


class TestStratified:
    def test_perfect(self):
        t = np.array([1.0, 25, 45, 65, 100, 5])
        rows = M.stratified_errors(t, t)
        assert [r.label for r in rows] == ["0-20", "20-40", "40-60", "60-80", ">80", "overall"]
        for r in rows:
            assert r.mae == r.rmse == 0
        # single-pixel bins have undefined R^2; the overall row is exact
        assert rows[-1].r2 == 1.0

    def test_per_bin_offsets(self):
        t = np.array([1.0, 2, 3, 21, 22, 90, 95, 100])
        off = np.where(t < 20, 1.0, np.where(t < 40, -3.0, 5.0))
        rows = M.stratified_errors(t + off, t)
        assert rows[0].mae == pytest.approx(1) and rows[1].mae == pytest.approx(3)
        assert rows[4].mae == pytest.approx(5)
        assert rows[2].count == 0 and rows[2].mae is None and rows[2].r2 is None

    @given(st.integers(0, 2**31))
    def test_counts_and_mae_le_rmse(self, seed):
        r = np.random.default_rng(seed)
        t = r.exponential(30, 200)
        p = t + r.normal(0, 5, 200)
        rows = M.stratified_errors(p, t)
        assert sum(x.count for x in rows[:-1]) == rows[-1].count == 200
        for x in rows:
            if x.count:
                assert x.mae <= x.rmse + 1e-12

    def test_errors(self):
        with pytest.raises(DomainError):
            M.stratified_errors([1.0], [-1.0])
        with pytest.raises(ValueError):
            M.stratified_errors([1.0], [1.0], [0, 0, 1])


class TestBaselines:
    def test_linear_recovers_slope(self):
        x = np.random.default_rng(4).uniform(0, 5, 1000)
        a, b = M.fit_linear(x, 2 * x)
        assert abs(a - 2) < 1e-6 and abs(b) < 1e-6
        lb = M.baseline_linear(x, 2 * x)
        assert np.allclose(lb.predict(np.array([0.0, 1.0])), np.expm1([0.0, 2.0]))

    def test_linear_singular(self):
        with pytest.raises(SingularFit):
            M.fit_linear([1.0, 1.0], [1.0, 2.0])

    def test_histmatch_self_is_identity(self):
        c = np.random.default_rng(5).integers(0, 256, 10_000)
        out = M.baseline_histmatch(c, M.code_cdf(c))
        assert np.abs(out - c).max() <= 1
        img = c[:4096].reshape(4, 32, 32)
        assert np.abs(M.baseline_histmatch(img, M.code_cdf(img)) - img).max() <= 1

    def test_histmatch_total_variation(self):
        r = np.random.default_rng(6)
        src = np.clip(np.rint(r.gamma(2.0, 20.0, 100_000)), 0, 255).astype(int)
        ref = np.clip(np.rint(r.normal(128, 30, 100_000)), 0, 255).astype(int)
        out = M.baseline_histmatch(src, M.code_cdf(ref))
        tv = M.total_variation(np.bincount(out, minlength=256), np.bincount(ref, minlength=256))
        assert tv < 0.02

    def test_histmatch_splits_a_dominant_level(self):
        # 70% of the source sits on one code, as with dark DMSP background
        r = np.random.default_rng(8)
        src = np.where(r.random(100_000) < 0.7, 0, r.integers(1, 64, 100_000))
        ref = np.clip(np.rint(r.exponential(20, 100_000)), 0, 255).astype(int)
        out = M.baseline_histmatch(src, M.code_cdf(ref))
        tv = M.total_variation(np.bincount(out, minlength=256), np.bincount(ref, minlength=256))
        assert tv < 0.02

    @given(st.integers(0, 2**31))
    def test_histmatch_monotone(self, seed):
        r = np.random.default_rng(seed)
        src = r.integers(0, 100, (3, 16, 16))
        out = M.baseline_histmatch(src, M.code_cdf(r.integers(50, 256, 5000)))
        s, o = src.ravel(), out.ravel()
        # a higher code never maps to a lower level
        lo = np.array([o[s == v].min() for v in np.unique(s)])
        hi = np.array([o[s == v].max() for v in np.unique(s)])
        assert np.all(lo[1:] >= hi[:-1])

    def test_code_checks(self):
        with pytest.raises(DomainError):
            M.code_cdf([300])
        with pytest.raises(ShapeError):
            M.code_cdf([])
        with pytest.raises(DomainError):
            M.exact_histmatch([300], np.linspace(0, 1, 256))


def test_density_grid():
    t = np.array([0.0, math.e - 1, math.e - 1])
    g, vmax = M.density_grid(t, t, bins=4)
    assert vmax == pytest.approx(1.0)
    assert g.shape == (4, 4) and g[0, 0] == pytest.approx(math.log10(2))
    assert g[3, 3] == pytest.approx(math.log10(3)) and g.sum() == pytest.approx(math.log10(6))
