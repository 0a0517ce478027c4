"""Numerical checks of the concentration bounds behind the DKE.

The bounds are stated up to constants, so these diagnostics look at shapes:
how a norm or a deviation scales with ``h`` and ``n``, and how tail
probabilities decay. Constants are fitted, never asserted.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dke import GridSpec, dke_fit, lp_distance
from .kernels import QuadratureError, kn_on_grid
from .parallel import cell_seed, ordered_map

N_RUNGS = 12
LADDER_QUANTILES = (0.5, 0.995)


# exponents ------------------------------------------------------------------


@dataclass(frozen=True)
class VarpiExponents:
    varpi_p: float
    varpi_inf: float
    varpi_sup: float


def varpi(p, beta0):
    """Exponents of ``h`` in the ``L_p``, ``L_inf`` and sup-norm bounds.

    ``varpi_p = -(1 - 1/p)`` for ``beta0 >= 0`` and ``beta0 - (1 - 1/p)``
    otherwise; ``varpi_inf`` is the ``p = inf`` case; ``varpi_sup = -1`` for
    ``beta0 >= 1/2`` and ``4 beta0 - 4`` otherwise.
    """
    p = float(p)
    if not p >= 2:
        raise ValueError("p must be at least 2")
    q = 1.0 - 1.0 / p if np.isfinite(p) else 1.0
    beta0 = float(beta0)
    vp = -q if beta0 >= 0 else beta0 - q
    vinf = -1.0 if beta0 >= 0 else beta0 - 1.0
    vsup = -1.0 if beta0 >= 0.5 else 4.0 * beta0 - 4.0
    return VarpiExponents(vp, vinf, vsup)


@dataclass(frozen=True)
class ConcentrationBound:
    """``h^varpi exp(c h^-beta / varrho)`` for one of the lemmas.

    ``c`` is 1 for the ``L_p`` norm of the scaled kernel, and 2 or 4 in the
    squared and sup-norm variants.
    """

    p: float
    beta0: float
    beta: float
    varrho: float
    c: float = 1.0
    sup: bool = False

    @property
    def exponents(self):
        return varpi(self.p, self.beta0)

    @property
    def varpi(self):
        e = self.exponents
        if self.sup:
            return e.varpi_sup
        return e.varpi_p if np.isfinite(self.p) else e.varpi_inf

    def log_bound(self, h):
        h = np.asarray(h, dtype=float)
        return self.varpi * np.log(h) + self.c * h ** (-self.beta) / self.varrho

    def bound(self, h):
        return np.exp(self.log_bound(h))


def lemma1_bound(error, p):
    return ConcentrationBound(p, error.beta0, error.beta, error.varrho, c=1.0)


# Lemma 1 --------------------------------------------------------------------


def kn_norm(kernel, error, h, p, dz=0.025, half_width=400.0):
    """``||K_n||_p`` on an FFT grid (``p = inf`` gives the sup norm)."""
    z, v = kn_on_grid(kernel, error, h, dz=dz, half_width=half_width)
    if not np.all(np.isfinite(v)):
        raise QuadratureError("non-finite K_n values", float("nan"))
    if np.isinf(p):
        return float(np.abs(v).max())
    return float(np.trapezoid(np.abs(v) ** p, z) ** (1.0 / p))


def scaled_kn_norm(kernel, error, h, p, **kw):
    """``||K~_n||_p`` for ``K~_n(x) = h^-1 K_n(x/h)``, i.e. ``h^(1/p - 1) ||K_n||_p``."""
    q = 1.0 - 1.0 / p if np.isfinite(p) else 1.0
    return h ** (-q) * kn_norm(kernel, error, h, p, **kw)


@dataclass
class RatioTable:
    h: np.ndarray
    norm: np.ndarray
    bound: np.ndarray
    ratio: np.ndarray
    p: float
    slope: float
    ci: tuple
    failures: dict = field(default_factory=dict)

    @property
    def trend_ok(self):
        """No significant increase of log ratio in log(1/h)."""
        return bool(self.ci[0] <= 0)

    def rows(self):
        return [dict(h=float(h), norm=float(n), bound=float(b), ratio=float(r), p=self.p)
                for h, n, b, r in zip(self.h, self.norm, self.bound, self.ratio)]


def trend_fit(x, y, level=0.95):
    """OLS slope of ``y`` on ``x`` with a ``t``-based confidence interval."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError("need at least three points for a trend fit")
    fit = stats.linregress(x, y)
    half = stats.t.ppf(0.5 + level / 2, x.size - 2) * fit.stderr
    return float(fit.slope), (float(fit.slope - half), float(fit.slope + half))


def check_lemma1_norm(kernel, error, h_grid, p):
    """Ratio of ``||K~_n||_p`` to ``h^varpi_p exp(h^-beta/varrho)`` along ``h_grid``.

    Points where the quadrature fails are dropped and listed in
    ``failures``. The trend of log ratio against ``log(1/h)`` is fitted by
    least squares.
    """
    h_grid = np.asarray(h_grid, dtype=float)
    if np.any(np.diff(h_grid) >= 0):
        raise ValueError("h_grid must be strictly decreasing")
    bnd = lemma1_bound(error, p)
    hs, norms, failures = [], [], {}
    for h in h_grid:
        try:
            norms.append(scaled_kn_norm(kernel, error, h, p))
            hs.append(h)
        except (QuadratureError, ValueError) as exc:
            failures[float(h)] = str(exc)
    hs = np.asarray(hs)
    norms = np.asarray(norms)
    bounds = bnd.bound(hs)
    ratio = norms / bounds
    slope, ci = trend_fit(np.log(1.0 / hs), np.log(ratio))
    return RatioTable(hs, norms, bounds, ratio, float(p), slope, ci, failures)


# tail ladders ---------------------------------------------------------------


@dataclass
class EmpiricalTailFit:
    """Exceedance frequencies over a geometric threshold ladder.

    ``coef`` holds ``(log C, c)`` of the fit ``log P(D >= u) ~ log C - c g(u)``
    with ``g(u) = u`` (exponential) or ``u^2`` (sub-Gaussian).
    """

    thresholds: np.ndarray
    probs: np.ndarray
    coef: tuple
    model: str
    samples: np.ndarray
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def rows(self):
        return [dict(threshold=float(u), exceedance=float(q))
                for u, q in zip(self.thresholds, self.probs)]


def threshold_ladder(samples, n_rungs=N_RUNGS, quantiles=LADDER_QUANTILES):
    lo, hi = np.quantile(samples, quantiles)
    lo = max(lo, np.finfo(float).tiny)
    if hi <= lo:
        hi = lo * (1 + 1e-9)
    return np.geomspace(lo, hi, n_rungs)


def exceedance(samples, thresholds):
    s = np.sort(np.asarray(samples, dtype=float))
    return 1.0 - np.searchsorted(s, thresholds, side="left") / s.size


def tail_fit(samples, model="exponential", seed=0):
    samples = np.asarray(samples, dtype=float)
    u = threshold_ladder(samples)
    prob = exceedance(samples, u)
    g = u if model == "exponential" else u ** 2
    keep = prob > 0
    fit = stats.linregress(g[keep], np.log(prob[keep]))
    return EmpiricalTailFit(u, prob, (float(fit.intercept), float(-fit.slope)), model,
                            samples, seed)


# Lemma 3 --------------------------------------------------------------------


def fixed_grid(truth, error, h, n_points=2048, kernel=None):
    """Grid shared by all replicates of a Monte Carlo deviation study."""
    lo, hi = truth.support(0.9999)
    spread = 6.0 * error.sigma if error.kind == "gaussian" else 0.0
    return GridSpec.around(np.array([lo - spread, hi + spread]), h, error, n_points,
                           kernel=kernel)


def mc_deviation(truth, kernel, error, h, n, reps, p=2.0, seed=0, threads=None,
                 n_points=2048):
    """Deviation ``||f_n - mean f_n||_p`` over ``reps`` simulated datasets.

    The returned fit carries the mean deviation, its standard error and the
    scaled mean ``n^(1/2) mean / (h^varpi_p exp(h^-beta/varrho))`` in ``extra``.
    The variance bound uses this same envelope, so it is exercised here
    rather than through an operation of its own.
    """
    if reps < 100:
        raise ValueError("reps must be at least 100")
    grid = fixed_grid(truth, error, h, n_points, kernel)

    def one(r):
        s = cell_seed(seed, n, r)
        rng = np.random.default_rng(s)
        W = truth.sample(n, rng) + error.sample(n, rng)
        return dke_fit(W, kernel, error, h, grid).values

    fits = np.array(ordered_map(one, range(reps), threads))
    center = fits.mean(axis=0)
    x = grid.x
    dev = np.array([lp_distance(f, center, p, x) for f in fits])
    out = tail_fit(dev, "exponential", seed)
    bnd = lemma1_bound(error, p)
    mean = float(dev.mean())
    out.extra = dict(mean=mean, se=float(dev.std(ddof=1) / math.sqrt(reps)), n=int(n),
                     h=float(h), p=float(p), reps=int(reps),
                     scaled_mean=mean * math.sqrt(n) / float(bnd.bound(h)))
    return out


# DKW ------------------------------------------------------------------------


def ks_distance(sample, cdf):
    """``sup |F_n - F|`` from order statistics."""
    w = np.sort(np.asarray(sample, dtype=float))
    n = w.size
    F = np.asarray(cdf(w), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def sup_distances(truth, error, n, reps, seed=0, threads=None):
    def one(r):
        rng = np.random.default_rng(cell_seed(seed, n, r))
        W = truth.sample(n, rng) + error.sample(n, rng)
        return ks_distance(W, lambda v: truth.convolved_cdf(error, v))

    return np.array(ordered_map(one, range(reps), threads))


def dkw_supnorm_check(truth, error, n, reps, seed=0, threads=None, min_fraction=0.5):
    """Sub-Gaussian tail fit of ``lambda = n^(1/2) sup |F_W - F_nW|``.

    ``extra["passes"]`` records whether the fitted exponent reaches
    ``min_fraction`` of the DKW constant 2.
    """
    if reps < 200:
        raise ValueError("reps must be at least 200")
    lam = math.sqrt(n) * sup_distances(truth, error, n, reps, seed, threads)
    out = tail_fit(lam, "subgaussian", seed)
    out.extra = dict(n=int(n), reps=int(reps), median=float(np.median(lam) / math.sqrt(n)),
                     exponent=out.coef[1], passes=bool(out.coef[1] >= 2.0 * min_fraction))
    return out


def median_scaling(truth, error, n, reps, seed=0, threads=None, factor=4):
    """Ratio of median sup-distances at ``n`` and ``factor * n``."""
    a = np.median(sup_distances(truth, error, n, reps, seed, threads))
    b = np.median(sup_distances(truth, error, factor * n, reps, seed + 1, threads))
    return float(a / b)


def distribution_free_check(truth_a, truth_b, error, n, reps, seed=0, threads=None):
    """Two-sample KS p-value between sup-distance samples under two truths."""
    a = sup_distances(truth_a, error, n, reps, seed, threads)
    b = sup_distances(truth_b, error, n, reps, seed + 1, threads)
    return float(stats.ks_2samp(a, b).pvalue)


# plug-in test ---------------------------------------------------------------


def plugin_test(W, f0X, kernel, error, h, M1, xi_n, p=2.0):
    """``1{||f_n - f0X||_p > M1 xi_n}`` with ``f_n`` fitted on ``f0X``'s grid.

    ``f0X`` is a :class:`~ssdeconv.dke.GridFunction` on a uniform grid.
    """
    x = np.asarray(f0X.x, dtype=float)
    if x.size < 2 or not np.allclose(np.diff(x), x[1] - x[0], rtol=1e-9, atol=1e-12):
        raise ValueError("f0X must live on a uniform grid")
    grid = GridSpec(float(x[0]), float(x[-1]), x.size)
    est = dke_fit(W, kernel, error, h, grid)
    return bool(lp_distance(est, f0X, p) > M1 * xi_n)


def plugin_rejection_rate(truth, kernel, error, n, h, M1, xi_n, reps=200, p=2.0, seed=0,
                          threads=None, n_points=2048):
    """Monte Carlo frequency of the plug-in test rejecting under the truth."""
    from .dke import GridFunction

    grid = fixed_grid(truth, error, h, n_points, kernel)
    f0 = GridFunction(grid.x, truth.pdf(grid.x))

    def one(r):
        rng = np.random.default_rng(cell_seed(seed, n, r))
        W = truth.sample(n, rng) + error.sample(n, rng)
        return plugin_test(W, f0, kernel, error, h, M1, xi_n, p)

    return float(np.mean(ordered_map(one, range(reps), threads)))
