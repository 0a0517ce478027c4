import math

import numpy as np
import pytest
from scipy import integrate

from ssdeconv.concentration import (ConcentrationBound, check_lemma1_norm,
                                    distribution_free_check, dkw_supnorm_check, exceedance,
                                    kn_norm, mc_deviation, median_scaling, plugin_rejection_rate,
                                    plugin_test, scaled_kn_norm, tail_fit, threshold_ladder,
                                    trend_fit, varpi)
from ssdeconv.dke import BandwidthSchedule, GridFunction, bandwidth, xi_supersmooth
from ssdeconv.error_models import ErrorModel
from ssdeconv.kernels import make_flat_top_kernel
from ssdeconv.truths import gauss_mixture, heavy_tail

KERNEL = make_flat_top_kernel()
H_GRID = [0.8, 0.7, 0.6, 0.5, 0.4, 0.3]
NORMAL = gauss_mixture([1.0], [0.0], [1.0])


class TestVarpi:
    # (p, beta0) -> (varpi_p, varpi_inf, varpi_sup), worked by hand from the
    # piecewise definitions
    LATTICE = {
        (2, 0.0): (-0.5, -1.0, -4.0),
        (2, -1.0): (-1.5, -2.0, -8.0),
        (4, 0.0): (-0.75, -1.0, -4.0),
        (4, -0.5): (-1.25, -1.5, -6.0),
        (np.inf, 0.0): (-1.0, -1.0, -4.0),
        (np.inf, -1.0): (-2.0, -2.0, -8.0),
        (2, 0.5): (-0.5, -1.0, -1.0),
        (3, 0.25): (-2 / 3, -1.0, -3.0),
        (np.inf, 2.0): (-1.0, -1.0, -1.0),
        (10, -0.2): (-1.1, -1.2, -4.8),
    }

    @pytest.mark.parametrize("key", list(LATTICE))
    def test_lattice(self, key):
        e = varpi(*key)
        np.testing.assert_allclose((e.varpi_p, e.varpi_inf, e.varpi_sup), self.LATTICE[key],
                                   rtol=0, atol=1e-15)

    def test_examples(self):
        assert varpi(2, 0.0).varpi_p == -0.5
        assert varpi(np.inf, -1.0).varpi_inf == -2.0
        assert varpi(2, 0.5).varpi_sup == -1.0
        assert varpi(2, 0.4999).varpi_sup < -1.0

    def test_p_below_two(self):
        with pytest.raises(ValueError):
            varpi(1.5, 0.0)

    def test_bound_arithmetic(self):
        b = ConcentrationBound(2.0, 0.0, 2.0, 4.0, c=2.0)
        np.testing.assert_allclose(b.bound(0.5), 0.5 ** -0.5 * math.exp(2 * 4 / 4), rtol=1e-14)
        assert ConcentrationBound(2.0, 0.0, 2.0, 4.0, sup=True).varpi == -4.0
        assert ConcentrationBound(np.inf, -1.0, 2.0, 4.0).varpi == -2.0


class TestLemma1:
    def test_no_error_identity(self):
        err = ErrorModel.none()
        for p in (2.0, 4.0):
            kp = integrate.quad(lambda z: abs(float(KERNEL.K(z))) ** p, -400, 400, limit=4000,
                                points=np.arange(-40, 41, 2.0))[0] ** (1 / p)
            for h in (0.8, 0.4):
                np.testing.assert_allclose(scaled_kn_norm(KERNEL, err, h, p),
                                           h ** -(1 - 1 / p) * kp, rtol=1e-6)

    def test_sup_norm_no_error(self):
        np.testing.assert_allclose(kn_norm(KERNEL, ErrorModel.none(), 0.5, np.inf),
                                   float(KERNEL.K(0.0)), rtol=1e-10)

    @pytest.mark.parametrize("error", [ErrorModel.gaussian(0.25), ErrorModel.cauchy(0.25)])
    @pytest.mark.parametrize("p", [2.0, 4.0, np.inf])
    def test_no_increasing_trend(self, error, p):
        table = check_lemma1_norm(KERNEL, error, H_GRID, p)
        assert table.trend_ok
        assert np.all(np.isfinite(table.ratio)) and table.ratio.max() / table.ratio.min() < 10
        assert not table.failures

    def test_deterministic(self):
        a = check_lemma1_norm(KERNEL, ErrorModel.gaussian(0.25), H_GRID, 2.0)
        b = check_lemma1_norm(KERNEL, ErrorModel.gaussian(0.25), H_GRID, 2.0)
        np.testing.assert_array_equal(a.ratio, b.ratio)
        assert a.rows() == b.rows()

    def test_grid_must_decrease(self):
        with pytest.raises(ValueError):
            check_lemma1_norm(KERNEL, ErrorModel.gaussian(0.25), [0.3, 0.5, 0.7], 2.0)

    def test_trend_fit_exact_line(self):
        slope, ci = trend_fit([0, 1, 2, 3], [1.0, 3.0, 5.0, 7.0 + 1e-9])
        np.testing.assert_allclose(slope, 2.0, rtol=1e-8)
        assert ci[0] <= slope <= ci[1]


class TestLadders:
    def test_ladder_and_exceedance(self):
        s = np.random.default_rng(0).exponential(size=5000)
        u = threshold_ladder(s)
        assert u.size == 12 and np.all(np.diff(u) > 0)
        np.testing.assert_allclose(u[[0, -1]], np.quantile(s, [0.5, 0.995]))
        q = exceedance(s, u)
        assert np.all((q >= 0) & (q <= 1)) and np.all(np.diff(q) <= 0)
        assert exceedance(np.array([1.0, 2.0, 3.0]), np.array([2.0]))[0] == pytest.approx(2 / 3)

    def test_exponential_fit_recovers_rate(self):
        s = np.random.default_rng(1).exponential(scale=0.5, size=200000)
        fit = tail_fit(s, "exponential")
        np.testing.assert_allclose(fit.coef[1], 2.0, rtol=0.05)


@pytest.fixture(scope="module")
def runs():
    err = ErrorModel.gaussian(0.25)
    h = bandwidth(BandwidthSchedule(), 500, err)
    return {n: mc_deviation(NORMAL, KERNEL, err, h, n, 200, seed=3) for n in (500, 2000)}


class TestDeviation:
    def test_scaled_mean_stable(self, runs):
        a, b = runs[500].extra["scaled_mean"], runs[2000].extra["scaled_mean"]
        assert 2 / 3 < a / b < 1.5

    def test_nonnegative_and_monotone(self, runs):
        fit = runs[500]
        assert np.all(fit.samples >= 0)
        assert np.all(np.diff(fit.probs) <= 0)

    def test_se_shrinks_with_reps(self):
        # the SE of a mean falls like reps^-1/2, so four times the reps halves it
        err = ErrorModel.gaussian(0.25)
        h = bandwidth(BandwidthSchedule(), 500, err)
        small = mc_deviation(NORMAL, KERNEL, err, h, 500, 100, seed=4).extra["se"]
        big = mc_deviation(NORMAL, KERNEL, err, h, 500, 400, seed=5).extra["se"]
        assert 0.35 < big / small < 0.65

    def test_reps_floor(self):
        with pytest.raises(ValueError):
            mc_deviation(NORMAL, KERNEL, ErrorModel.gaussian(0.25), 0.5, 100, 50)


class TestDKW:
    def test_subgaussian_tail(self):
        fit = dkw_supnorm_check(NORMAL, ErrorModel.gaussian(0.25), 400, 2000, seed=6)
        assert fit.coef[1] >= 1.0 and fit.extra["passes"]

    def test_median_scaling(self):
        ratio = median_scaling(NORMAL, ErrorModel.gaussian(0.25), 200, 400, seed=7)
        assert abs(ratio / 2 - 1) < 0.2

    def test_distribution_free(self):
        cauchy_truth = heavy_tail(c2=2.0)
        assert distribution_free_check(NORMAL, cauchy_truth, ErrorModel.gaussian(0.25), 200, 400,
                                       seed=8) > 0.01

    def test_reps_floor(self):
        with pytest.raises(ValueError):
            dkw_supnorm_check(NORMAL, ErrorModel.gaussian(0.25), 100, 100)


class TestPluginTest:
    err = ErrorModel.gaussian(0.25)
    x = np.linspace(-40, 45, 4096)

    def test_huge_threshold_accepts(self):
        W = NORMAL.sample(300, 1) + self.err.sample(300, 2)
        f0 = GridFunction(self.x, NORMAL.pdf(self.x))
        assert not plugin_test(W, f0, KERNEL, self.err, 0.4, M1=1e6, xi_n=1.0)

    def test_distant_truth_rejects(self):
        W = NORMAL.sample(300, 1) + 5.0 + self.err.sample(300, 2)
        f0 = GridFunction(self.x, NORMAL.pdf(self.x))
        assert plugin_test(W, f0, KERNEL, self.err, 0.4, M1=1e-3, xi_n=1.0)

    def test_grid_must_be_uniform(self):
        x = np.array([0.0, 1.0, 3.0])
        with pytest.raises(ValueError):
            plugin_test([0.0], GridFunction(x, x), KERNEL, self.err, 0.4, 1.0, 1.0)

    @pytest.mark.slow
    def test_level_falls_with_n(self):
        rates = []
        for n in (200, 800, 3200):
            h = bandwidth(BandwidthSchedule(), n, self.err)
            xi = xi_supersmooth(n, 2.0, self.err.beta)
            rates.append(plugin_rejection_rate(NORMAL, KERNEL, self.err, n, h, 0.3, xi,
                                               reps=200, seed=9, n_points=1024))
        assert rates[0] > rates[-1] and rates[1] >= rates[2]
