import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from ssdeconv.dke import (BandwidthSchedule, GridFunction, GridSpec, GridTooNarrow,
                          accelerated_sigma, bandwidth, dke_eval_direct, dke_fit, empirical_cf,
                          epsilon_schedule, kde, lp_distance, t_lower_bound, xi_supersmooth)
from ssdeconv.error_models import ErrorModel
from ssdeconv.kernels import BandwidthTooSmall, make_flat_top_kernel

KERNEL = make_flat_top_kernel()


def kn_quad(error, h, z):
    """Independent K_n(z) by adaptive cosine-weighted quadrature of its spectrum."""
    f = lambda t: float(KERNEL.phi(t) / np.real(error.cf(t / h)))
    return integrate.quad(f, 0.0, 1.0, weight="cos", wvar=z, epsabs=1e-15, limit=500)[0] / np.pi


class TestEmpiricalCF:
    def test_examples(self):
        assert empirical_cf([0.0], 3.7) == 1 + 0j
        np.testing.assert_allclose(empirical_cf([-1.0, 1.0], np.pi), -1.0, atol=1e-15)

    def test_naive_sum(self):
        W = np.random.default_rng(0).normal(size=100)
        naive = sum(complex(math.cos(0.7 * w), math.sin(0.7 * w)) for w in W) / 100
        np.testing.assert_allclose(empirical_cf(W, 0.7), naive, atol=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(-20, 20))
    @settings(max_examples=50, deadline=None)
    def test_bounded(self, W, t):
        assert abs(empirical_cf(W, t)) <= 1 + 1e-12
        np.testing.assert_allclose(empirical_cf(W, 0.0), 1.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            empirical_cf([], 1.0)


class TestDkeFit:
    def test_three_point_example(self):
        err = ErrorModel.gaussian(0.5)
        W = np.array([-1.0, 0.0, 1.0])
        grid = GridSpec(-40.0, 40.0, 4001)
        est = dke_fit(W, KERNEL, err, 0.5, grid)
        at0 = est.values[2000]
        assert est.x[2000] == 0.0
        direct = dke_eval_direct(W, KERNEL, err, 0.5, 0.0)[0]
        oracle = sum(kn_quad(err, 0.5, (0.0 - w) / 0.5) for w in W) / (3 * 0.5)
        np.testing.assert_allclose(at0, direct, atol=1e-8)
        np.testing.assert_allclose(direct, oracle, atol=1e-10)

    def test_no_error_is_kde(self):
        W = np.random.default_rng(1).normal(size=150)
        est = dke_fit(W, KERNEL, ErrorModel.none(), 0.3)
        np.testing.assert_allclose(est.values, kde(W, KERNEL, 0.3, est.x), atol=1e-8)

    @pytest.mark.parametrize("error,h", [(ErrorModel.gaussian(0.25), 0.35),
                                         (ErrorModel.cauchy(0.2), 0.4),
                                         (ErrorModel.none(), 0.3)])
    def test_mass_and_realness(self, error, h):
        W = np.random.default_rng(2).normal(size=200) + error.sample(200, seed=3)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            est = dke_fit(W, KERNEL, error, h)
        assert abs(est.mass - 1) < 1e-3
        assert est.meta["imag_residue"] < 1e-10
        assert est.n == 200 and est.h == h

    def test_matches_direct_at_random_points(self):
        rng = np.random.default_rng(4)
        err = ErrorModel.gaussian(0.3)
        W = rng.normal(size=120) + err.sample(120, seed=5)
        est = dke_fit(W, KERNEL, err, 0.45)
        idx = rng.choice(est.x.size, 20, replace=False)
        np.testing.assert_allclose(est.values[idx], dke_eval_direct(W, KERNEL, err, 0.45, est.x[idx]),
                                   atol=1e-6)

    def test_narrow_grid_warns(self):
        W = np.random.default_rng(6).normal(size=50)
        with pytest.warns(GridTooNarrow):
            dke_fit(W, KERNEL, ErrorModel.gaussian(0.2), 0.5, GridSpec(-0.5, 0.5, 256))

    def test_bandwidth_cap(self):
        with pytest.raises(BandwidthTooSmall):
            dke_fit([0.0, 1.0], KERNEL, ErrorModel.gaussian(1.0), 0.05)

    def test_projection_flag(self):
        W = np.random.default_rng(7).normal(size=60)
        est = dke_fit(W, KERNEL, ErrorModel.gaussian(0.3), 0.3, project=True)
        assert est.meta["projected"] and np.all(est.values >= 0)
        np.testing.assert_allclose(est.mass, 1.0, rtol=1e-12)

    def test_default_pad(self):
        W = np.array([0.0, 1.0])
        g = GridSpec.around(W, 0.5, ErrorModel.gaussian(1.0))
        assert g.x_min == -4.0 and g.x_max == 5.0
        g = GridSpec.around(W, 0.5, ErrorModel.gaussian(1.0), pad=1.0)
        assert (g.x_min, g.x_max) == (-1.0, 2.0)


class TestDirect:
    def test_single_observation(self):
        err = ErrorModel.gaussian(0.3)
        np.testing.assert_allclose(dke_eval_direct([1.3], KERNEL, err, 0.4, 1.3)[0],
                                   kn_quad(err, 0.4, 0.0) / 0.4, rtol=1e-10)

    def test_permutation_invariant(self):
        W = np.random.default_rng(8).normal(size=30)
        err = ErrorModel.cauchy(0.2)
        x = np.array([-0.5, 0.1, 2.0])
        a = dke_eval_direct(W, KERNEL, err, 0.5, x)
        b = dke_eval_direct(W[::-1].copy(), KERNEL, err, 0.5, x)
        np.testing.assert_allclose(a, b, rtol=1e-13)


class TestBandwidth:
    def test_plug_in(self):
        sched = BandwidthSchedule("supersmooth_lp", gamma=0.5)
        err = ErrorModel.gaussian(1.0)
        assert err.varrho == 2.0 and err.beta == 2.0
        np.testing.assert_allclose(bandwidth(sched, math.exp(4), err), math.sqrt(2) / 2, rtol=1e-14)

    @pytest.mark.parametrize("regime", ["supersmooth_lp", "supersmooth_sup", "accelerated"])
    def test_decreasing(self, regime):
        sched = BandwidthSchedule(regime)
        ns = np.geomspace(1e2, 1e6, 30)
        h = np.array([bandwidth(sched, n, ErrorModel.cauchy(0.3)) for n in ns])
        assert np.all(h > 0) and np.all(np.diff(h) < 0)

    @pytest.mark.parametrize("error", [ErrorModel.gaussian(0.4), ErrorModel.cauchy(0.4)])
    def test_sup_lp_ratio(self, error):
        lp = bandwidth(BandwidthSchedule("supersmooth_lp"), 1000, error)
        sup = bandwidth(BandwidthSchedule("supersmooth_sup"), 1000, error)
        np.testing.assert_allclose(sup / lp, 2 ** (1 / error.beta), rtol=1e-14)

    def test_rejections(self):
        with pytest.raises(ValueError):
            bandwidth(BandwidthSchedule(), 1, ErrorModel.gaussian(0.3))
        with pytest.raises(ValueError):
            BandwidthSchedule(gamma=1.5)
        with pytest.raises(ValueError):
            bandwidth(BandwidthSchedule(), 100, ErrorModel.none())

    def test_accelerated_sigma(self):
        np.testing.assert_allclose(accelerated_sigma(math.exp(5), 2.0, 1.2),
                                   math.exp(-1.0) * 5 ** 0.6, rtol=1e-14)
        np.testing.assert_allclose(t_lower_bound(1.0, 2.0), 3.5 / 3, rtol=1e-15)
        with pytest.raises(ValueError, match="1.16667"):
            accelerated_sigma(100, 1.0, 1.1, c3=2.0)
        s = [accelerated_sigma(n, 2.0, 1.25) for n in (1e2, 1e3, 1e4, 1e5)]
        assert np.all(np.diff(s) < 0)

    def test_schedules(self):
        np.testing.assert_allclose(epsilon_schedule(math.exp(2), 0.5, 1.0), 2 * math.exp(-1))
        np.testing.assert_allclose(xi_supersmooth(math.exp(4), 2.0, 2.0), 0.25)


class TestLpDistance:
    x = np.linspace(-12, 12, 24001)

    def test_zero(self):
        f = np.exp(-self.x ** 2)
        assert lp_distance(f, f, 2, self.x) == 0.0
        assert lp_distance(f, f, np.inf, self.x) == 0.0

    def test_closed_form(self):
        # int exp(-2 x^2) dx = sqrt(pi/2)
        f = np.exp(-self.x ** 2)
        np.testing.assert_allclose(lp_distance(f, 0 * f, 2, self.x), (np.pi / 2) ** 0.25, rtol=1e-8)
        np.testing.assert_allclose(lp_distance(f, 0 * f, np.inf, self.x), 1.0)

    @given(st.integers(0, 10 ** 6), st.sampled_from([1.0, 2.0, 3.5, np.inf]))
    @settings(max_examples=40, deadline=None)
    def test_triangle(self, seed, p):
        rng = np.random.default_rng(seed)
        x = np.linspace(0, 1, 50)
        f, g, k = rng.normal(size=(3, 50))
        assert lp_distance(f, k, p, x) <= lp_distance(f, g, p, x) + lp_distance(g, k, p, x) + 1e-12

    def test_grid_mismatch(self):
        a = GridFunction(np.linspace(0, 1, 5), np.zeros(5))
        b = GridFunction(np.linspace(0, 2, 5), np.zeros(5))
        with pytest.raises(ValueError):
            lp_distance(a, b)
        with pytest.raises(ValueError):
            lp_distance(np.zeros(4), np.zeros(5), 2, np.linspace(0, 1, 4))
