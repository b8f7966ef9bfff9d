import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from devtox.distributions import (
    bb_pmf,
    binomial_pmf,
    gauss_hermite,
    lnb_pmf,
    log_logistic,
    logistic,
    logit_normal_integral,
    logit_normal_square_integral,
    polya_gamma_array,
    polya_gamma_mean,
    sample_inverse_gamma,
    sample_inverse_wishart,
    sample_mvn,
    sample_polya_gamma,
    sample_shifted_poisson,
    sample_standard_families,
    taylor_lnb_moments,
)

# mpmath, 30 digits, adaptive quadrature on the standard normal scale
EPS_2_1 = 0.844537481469876517013719276722
EPS_SQ_1_HALF = 0.52445173718358662934147539784


class TestLogistic:
    def test_values(self):
        assert logistic(0.0) == 0.5
        assert logistic(2.0) == pytest.approx(0.8807970779778823, abs=1e-16)

    def test_saturates_without_overflow(self):
        with np.errstate(over="raise"):
            assert logistic(800.0) == 1.0
            assert logistic(-800.0) == 0.0

    def test_nan_propagates(self):
        assert np.isnan(logistic(np.array([np.nan, 0.0]))[0])


class TestPolyaGamma:
    def test_mean_at_zero_tilt(self):
        rng = np.random.default_rng(1)
        x = polya_gamma_array(np.ones(1_000_000, dtype=np.int64), 0.0, rng)
        se = x.std() / math.sqrt(x.size)
        assert abs(x.mean() - 0.25) < 3 * se

    def test_mean_at_c2(self):
        rng = np.random.default_rng(2)
        x = polya_gamma_array(np.ones(200_000, dtype=np.int64), 2.0, rng)
        assert abs(x.mean() - math.tanh(1) / 4) < 3 * x.std() / math.sqrt(x.size)

    def test_shape_three_is_sum(self):
        rng = np.random.default_rng(3)
        x = polya_gamma_array(np.full(100_000, 3), 0.0, rng)
        assert abs(x.mean() - 0.75) < 3 * x.std() / math.sqrt(x.size)

    def test_shape_zero_gives_zero(self):
        assert np.all(polya_gamma_array(np.zeros(5, dtype=np.int64), 1.0, np.random.default_rng(0)) == 0)

    def test_scalar_sampler_rejects_bad_shapes(self):
        rng = np.random.default_rng(0)
        assert sample_polya_gamma(2, 0.5, rng) > 0
        with pytest.raises(ValueError):
            sample_polya_gamma(1.5, 0.0, rng)
        with pytest.raises(ValueError):
            sample_polya_gamma(0, 0.0, rng)

    def test_mean_formula_limit(self):
        assert polya_gamma_mean(1, 0.0) == pytest.approx(0.25)
        assert polya_gamma_mean(2, 1e-9) == pytest.approx(0.5)
        assert polya_gamma_mean(1, 3.0) == pytest.approx(math.tanh(1.5) / 6)

    def test_seeded_determinism(self):
        a = polya_gamma_array(np.full(50, 2), np.linspace(-3, 3, 50), np.random.default_rng(9))
        b = polya_gamma_array(np.full(50, 2), np.linspace(-3, 3, 50), np.random.default_rng(9))
        assert np.array_equal(a, b)


class TestLogitNormal:
    def test_oracles(self):
        assert logit_normal_integral(2.0, 1.0) == pytest.approx(EPS_2_1, abs=1e-8)
        assert logit_normal_square_integral(1.0, 0.5) == pytest.approx(EPS_SQ_1_HALF, abs=1e-8)

    @given(st.floats(0, 4))
    def test_symmetric_at_zero(self, s2):
        assert logit_normal_integral(0.0, s2) == pytest.approx(0.5, abs=1e-12)

    @given(st.floats(-10, 10))
    def test_degenerate_variance(self, theta):
        assert logit_normal_integral(theta, 0.0) == logistic(theta)
        assert logit_normal_square_integral(theta, 0.0) == pytest.approx(logistic(theta) ** 2, rel=1e-14)

    def test_square_at_origin(self):
        assert logit_normal_square_integral(0.0, 0.0) == 0.25

    @given(st.floats(-6, 6), st.floats(0, 4))
    def test_square_below_mean(self, theta, s2):
        assert logit_normal_square_integral(theta, s2) <= logit_normal_integral(theta, s2) + 1e-15

    def test_monotone_in_theta(self):
        theta = np.linspace(-6, 6, 241)
        for s2 in (0.1, 1.0, 4.0):
            assert np.all(np.diff(logit_normal_integral(theta, np.full_like(theta, s2))) >= 0)

    def test_order_doubling_stable(self):
        theta = np.linspace(-5, 5, 41)[:, None]
        s2 = np.linspace(0, 4, 21)[None, :]
        for f in (logit_normal_integral, logit_normal_square_integral):
            lo = f(theta, s2, gauss_hermite(20))
            hi = f(theta, s2, gauss_hermite(40))
            assert np.max(np.abs(lo - hi)) < 1e-7

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            logit_normal_integral(0.0, -1.0)


class TestMassFunctions:
    @settings(max_examples=60)
    @given(st.integers(1, 25), st.floats(-5, 5), st.floats(0.05, 200))
    def test_bb_normalizes(self, m, theta, lam):
        assert np.sum(bb_pmf(np.arange(m + 1), m, theta, lam)) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=60)
    @given(st.integers(1, 25), st.floats(-5, 5), st.floats(0, 4))
    def test_lnb_normalizes(self, m, theta, s2):
        assert np.sum(lnb_pmf(np.arange(m + 1), m, theta, s2)) == pytest.approx(1.0, abs=1e-8)

    def test_bb_single_trial(self):
        assert bb_pmf(1, 1, 0.7, 3.0) == pytest.approx(logistic(0.7), abs=1e-14)

    def test_bb_collapses_to_binomial(self):
        k = np.arange(11)
        assert np.allclose(bb_pmf(k, 10, 0.0, 1e6), binomial_pmf(k, 10, 0.5), atol=1e-4, rtol=0)

    def test_lnb_degenerate_is_binomial(self):
        k = np.arange(8)
        assert np.allclose(lnb_pmf(k, 7, -0.4, 0.0), binomial_pmf(k, 7, logistic(-0.4)), atol=1e-12, rtol=0)

    @pytest.mark.parametrize("s2", [5e-324, 1e-300, 1e-20])
    def test_lnb_negligible_spread_is_binomial(self, s2):
        k = np.arange(13)
        assert np.allclose(lnb_pmf(k, 12, 0.3, s2), binomial_pmf(k, 12, logistic(0.3)), atol=1e-12, rtol=0)

    def test_lnb_single_trial(self):
        assert lnb_pmf(1, 1, 2.0, 1.0) == pytest.approx(EPS_2_1, abs=1e-8)

    def test_binomial_edges(self):
        assert binomial_pmf(0, 5, 0.0) == 1.0
        assert binomial_pmf(5, 5, 1.0) == 1.0
        assert binomial_pmf(20, 20, 1e-300) == 0.0

    def test_count_validation(self):
        with pytest.raises(ValueError):
            binomial_pmf(4, 3, 0.5)
        with pytest.raises(ValueError):
            bb_pmf(1, 3, 0.0, 0.0)


class TestTaylorMoments:
    @given(st.floats(0, 2))
    def test_centre(self, s2):
        mean, corr = taylor_lnb_moments(0.0, s2)
        assert mean == 0.5
        assert corr == s2 / 4

    def test_no_spread(self):
        assert taylor_lnb_moments(1.3, 0.0)[1] == 0.0

    @staticmethod
    def _relative_error(theta, s2):
        p = logit_normal_integral(theta, s2)
        exact = (logit_normal_square_integral(theta, s2) - p * p) / (p * (1 - p))
        return taylor_lnb_moments(theta, s2)[1] / exact - 1

    def test_close_to_exact_correlation_for_small_spread(self):
        theta, s2 = np.meshgrid(np.linspace(-2, 2, 21), np.linspace(0.01, 0.1, 10))
        assert np.max(np.abs(self._relative_error(theta, s2))) < 0.10

    def test_error_vanishes_with_spread(self):
        theta = np.linspace(-2, 2, 9)
        errs = [np.max(np.abs(self._relative_error(theta, np.full_like(theta, s2))))
                for s2 in (0.4, 0.1, 0.025, 0.00625)]
        assert np.all(np.diff(errs) < 0)
        assert errs[-1] < 0.01


class TestStandardFamilies:
    def test_mvn_covariance(self):
        x = sample_mvn(np.zeros(2), np.eye(2), np.random.default_rng(0), size=100_000)
        assert np.allclose(np.cov(x.T), np.eye(2), atol=0.02)

    def test_inverse_gamma_mean(self):
        x = sample_inverse_gamma(3.0, 1.2, np.random.default_rng(0), size=200_000)
        assert abs(x.mean() - 0.6) < 3 * x.std() / math.sqrt(x.size)

    def test_shifted_poisson_support(self):
        x = sample_shifted_poisson(13.0, np.random.default_rng(0), size=10_000)
        assert x.min() >= 1
        assert x.mean() == pytest.approx(14.0, abs=0.15)

    def test_inverse_wishart_mean(self):
        rng = np.random.default_rng(5)
        scale = np.array([[2.0, 0.3], [0.3, 1.0]])
        draws = np.array([sample_inverse_wishart(8.0, scale, rng) for _ in range(20_000)])
        assert np.allclose(draws.mean(axis=0), scale / (8 - 3), atol=0.02)

    def test_dispatch(self):
        rng = np.random.default_rng(0)
        assert sample_standard_families("beta", {"a": 1, "b": 1}, rng, size=3).shape == (3,)
        with pytest.raises(ValueError, match="unknown family"):
            sample_standard_families("cauchy", {}, rng)

    def test_non_pd_covariance(self):
        with pytest.raises(ValueError, match="positive definite"):
            sample_mvn(np.zeros(2), -np.eye(2), np.random.default_rng(0))


class TestLnbAccuracy:
    @staticmethod
    def _quad(y, m, theta, s2):
        sd = math.sqrt(s2)
        logc = math.lgamma(m + 1) - math.lgamma(y + 1) - math.lgamma(m - y + 1)

        def f(z):
            psi = theta + sd * z
            return math.exp(logc + y * log_logistic(psi) + (m - y) * log_logistic(-psi) - z * z / 2)

        return integrate.quad(f, -12, 12, epsabs=1e-15, epsrel=1e-13, limit=500)[0] / math.sqrt(2 * math.pi)

    @pytest.mark.parametrize("m", [3, 12, 25])
    def test_matches_adaptive_quad(self, m):
        for theta in (-4.0, 0.0, 2.5):
            for s2 in (0.3, 1.0, 2.0):
                got = lnb_pmf(np.arange(m + 1), m, theta, s2)
                want = [self._quad(y, m, theta, s2) for y in range(m + 1)]
                assert np.max(np.abs(got - want)) < 1e-8

    def test_order_doubling_moderate_spread(self):
        theta = np.linspace(-6, 6, 31)[:, None]
        s2 = np.linspace(0, 1, 21)[None, :]
        for m in (1, 12, 25):
            y = np.arange(m + 1)[:, None, None]
            lo = lnb_pmf(y, m, theta, s2, gauss_hermite(20))
            hi = lnb_pmf(y, m, theta, s2, gauss_hermite(40))
            assert np.max(np.abs(lo - hi)) < 1e-8
