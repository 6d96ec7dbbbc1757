import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcopula.mathcore import (
    DomainError,
    FixedThresholdBvn,
    bvn_cdf,
    bvn_cdf_array,
    bvn_cdf_linear,
    bvn_pdf,
    bvn_pdf_array,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)

# 40-digit quadrature of  int_{-inf}^{t1} phi(x) Phi((t2 - r x) / sqrt(1 - r^2)) dx
# (mpmath), computed once and frozen here.
BVN_ORACLE = [
    (-1.2816, -1.0364, 0.3, 0.029786290322390467612),
    (0.5, -0.7, -0.6, 0.091031161671799630388),
    (-2.0, 1.5, 0.95, 0.0227501319481792072),
    (1.0, 1.0, -0.95, 0.68268949213953509231),
    (-0.3, -0.3, 0.99, 0.36055472381259142965),
    (2.5, -2.5, 0.1, 0.0061935554790831942326),
    (-1.645, -1.2816, 0.7948, 0.034927767907887402201),
    (0.0, 0.0, 0.5, 0.33333333333333333333),
    (-3.0, -3.0, 0.2, 0.000011434588610931851055),
    (1.7, -0.4, -0.93, 0.30001835289251728323),
]

finite = st.floats(-6.0, 6.0, allow_nan=False)
corr = st.floats(-0.999, 0.999, allow_nan=False)


class TestUnivariate:
    def test_cdf_examples(self):
        assert std_normal_cdf(0.0) == 0.5
        assert abs(std_normal_cdf(8.0) - 1.0) <= 1e-12
        assert abs(std_normal_cdf(1.0) - 0.8413447460685429) <= 1e-15

    def test_quantile_examples(self):
        assert std_normal_quantile(0.5) == 0.0
        assert abs(std_normal_quantile(0.8413447460685429) - 1.0) <= 1e-9
        for p in (0.01, 0.1, 0.3):
            assert abs(std_normal_quantile(p) + std_normal_quantile(1 - p)) <= 1e-10

    def test_pdf_examples(self):
        assert abs(std_normal_pdf(0.0) - 0.3989422804014327) <= 1e-16
        assert std_normal_pdf(1.3) == std_normal_pdf(-1.3)
        assert abs(std_normal_pdf(1.0) - 0.24197072451914337) <= 1e-16

    @pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(DomainError):
            std_normal_cdf(bad)
        with pytest.raises(DomainError):
            std_normal_pdf(bad)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_quantile_domain(self, p):
        with pytest.raises(DomainError):
            std_normal_quantile(p)

    @given(st.floats(1e-8, 1 - 1e-8))
    def test_quantile_round_trip(self, p):
        assert abs(std_normal_cdf(std_normal_quantile(p)) - p) <= 1e-10

    @given(finite, finite)
    def test_cdf_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert std_normal_cdf(lo) <= std_normal_cdf(hi)

    @given(finite)
    def test_pdf_formula(self, x):
        assert abs(std_normal_pdf(x) - math.exp(-x * x / 2) / math.sqrt(2 * math.pi)) <= 1e-14


class TestBivariate:
    @pytest.mark.parametrize("t1,t2,r,expected", BVN_ORACLE)
    def test_against_quadrature_oracle(self, t1, t2, r, expected):
        assert abs(bvn_cdf(t1, t2, r) - expected) <= 1e-12

    def test_examples(self):
        assert abs(bvn_cdf(0, 0, 0) - 0.25) <= 1e-15
        assert abs(bvn_cdf(0, 0, 0.5) - 1 / 3) <= 1e-7
        for t in np.linspace(-3, 3, 7):
            for u in np.linspace(-3, 3, 7):
                expected = std_normal_cdf(t) * std_normal_cdf(u)
                assert abs(bvn_cdf(t, u, 0.0) - expected) <= 1e-9

    @pytest.mark.parametrize("r", [1.0, -1.0, 1.2, math.nan])
    def test_correlation_domain(self, r):
        with pytest.raises(DomainError):
            bvn_cdf(0.0, 0.0, r)
        with pytest.raises(DomainError):
            bvn_cdf_linear(0.0, 0.0, r)

    def test_threshold_domain(self):
        with pytest.raises(DomainError):
            bvn_cdf(math.inf, 0.0, 0.1)

    def test_orthant_identity_grid(self):
        for r in np.arange(-0.95, 0.951, 0.05):
            assert abs(bvn_cdf(0.0, 0.0, r) - (0.25 + math.asin(r) / (2 * math.pi))) <= 1e-7

    @settings(max_examples=300)
    @given(finite, finite, corr)
    def test_frechet_bounds(self, t1, t2, r):
        c1, c2 = std_normal_cdf(t1), std_normal_cdf(t2)
        v = bvn_cdf(t1, t2, r)
        assert max(0.0, c1 + c2 - 1.0) <= v <= min(c1, c2)

    @settings(max_examples=300)
    @given(finite, finite, corr)
    def test_exact_symmetry(self, t1, t2, r):
        assert bvn_cdf(t1, t2, r) == bvn_cdf(t2, t1, r)

    @settings(max_examples=200)
    @given(finite, finite, corr, corr)
    def test_monotone_in_r(self, t1, t2, r1, r2):
        lo, hi = sorted((r1, r2))
        assert bvn_cdf(t1, t2, lo) <= bvn_cdf(t1, t2, hi) + 1e-14

    @settings(max_examples=100)
    @given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-0.9, 0.9))
    def test_pdf_is_derivative_in_r(self, t1, t2, r):
        h = 1e-5
        numeric = (bvn_cdf(t1, t2, r + h) - bvn_cdf(t1, t2, r - h)) / (2 * h)
        assert abs(numeric - bvn_pdf(t1, t2, r)) <= 1e-7

    def test_array_matches_scalar(self, rng):
        t1 = rng.uniform(-3, 3, 500)
        t2 = rng.uniform(-3, 3, 500)
        r = rng.uniform(-0.99, 0.99, 500)
        arr = bvn_cdf_array(t1, t2, r)
        assert np.allclose(arr, [bvn_cdf(a, b, c) for a, b, c in zip(t1, t2, r)], atol=1e-15)

    def test_fixed_threshold_evaluator_matches(self, rng):
        t1 = rng.uniform(-3, 3, 2000)
        t2 = rng.uniform(-3, 3, 2000)
        ev = FixedThresholdBvn(t1, t2)
        for scale in (0.1, 0.5, 0.99):
            r = rng.uniform(-scale, scale, 2000)
            assert np.array_equal(ev.cdf(r), bvn_cdf_array(t1, t2, r))
            assert np.allclose(ev.pdf(r), bvn_pdf_array(t1, t2, r), rtol=1e-13, atol=0)

    def test_grouped_evaluator_matches(self, rng):
        n, n_groups = 3000, 150
        t1 = rng.uniform(-3, 3, n)
        t2 = rng.uniform(-3, 3, n)
        groups = rng.integers(n_groups, size=n)
        # every quadrature band, including the asymptotic one
        r_group = np.concatenate([rng.uniform(-0.3, 0.3, 60), rng.uniform(-0.99, 0.99, 90)])
        ev = FixedThresholdBvn(t1, t2, groups=groups)
        r = r_group[groups]
        assert np.abs(ev.cdf_grouped(r_group) - bvn_cdf_array(t1, t2, r)).max() <= 1e-15
        assert np.allclose(ev.pdf_grouped(r_group), bvn_pdf_array(t1, t2, r), rtol=1e-12, atol=0)


class TestLinear:
    def test_example(self):
        phi0 = 1 / math.sqrt(2 * math.pi)
        assert abs(bvn_cdf_linear(0, 0, 0.5) - (0.25 + 0.5 * phi0**2)) <= 1e-15
        assert abs(bvn_cdf_linear(0, 0, 0.5) - 0.32958) <= 1e-5

    @given(finite, finite)
    def test_zero_order(self, t1, t2):
        assert abs(bvn_cdf_linear(t1, t2, 0.0) - bvn_cdf(t1, t2, 0.0)) <= 1e-12

    def test_grid_error_bound(self):
        t = np.arange(-3, 3.01, 0.25)
        r = np.arange(-0.3, 0.301, 0.05)
        T1, T2, Rg = np.meshgrid(t, t, r, indexing="ij")
        err = np.abs(
            np.vectorize(bvn_cdf_linear)(T1, T2, Rg) - np.vectorize(bvn_cdf)(T1, T2, Rg)
        )
        assert err.max() <= 0.01

    def test_clamped_to_unit_interval(self):
        assert bvn_cdf_linear(-0.2, -0.2, -0.99) >= 0.0
        assert 0.0 <= bvn_cdf_linear(5.0, 5.0, 0.99) <= 1.0
