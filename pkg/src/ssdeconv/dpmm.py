"""Dirichlet process mixture of Normals for the error-free density.

The prior is a truncated stick-breaking mixture

    f_X(x) = sum_k pi_k Normal(x | mu_k, h^2),
    pi_k = S_k prod_{l<k} (1 - S_l),  S_k ~ Beta(1, alpha),
    mu_k ~ Normal(mu0, sigma0sq),     h^2 ~ InvGamma(a, b),

and the likelihood of the contaminated sample is ``f_W = f_X * psi_sigma``.
Fitting uses a blocked Gibbs sampler with the true values ``x_i`` carried as
latent variables, so every conditional except the latent update under a
non-Gaussian error is conjugate.

Truncation sets ``S_K = 1``, which makes the weights sum to one exactly; the
prior probability that the untruncated stick leaves more than
``{alpha/(1+alpha)}^K`` behind is what ``K`` is chosen to control.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import special

from .dke import GridSpec, lp_distance
from .error_models import voigt
from .kernels import QuadratureError

log = logging.getLogger(__name__)

SAMPLER = "blocked-gibbs-truncated"
H_PRIORS = ("invgamma", "exponential")
RESIDUAL_TARGET = 1e-6


class ChainError(RuntimeError):
    """Non-finite value in the chain; ``state`` holds the last finite state."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


def truncation_level(alpha, target=RESIDUAL_TARGET):
    """Smallest ``K`` with ``{alpha/(1+alpha)}^K < target``."""
    ratio = alpha / (1.0 + alpha)
    k = math.log(target) / math.log(ratio)
    K = max(1, math.ceil(k))
    # guard the boundary case where k is an exact integer
    while ratio ** K >= target:
        K += 1
    return K


@dataclass(frozen=True)
class DpmmPrior:
    """Hyperparameters.

    ``h_prior="invgamma"`` places InvGamma(a, b) on ``h^2``;
    ``h_prior="exponential"`` places Exp(lam) on ``h`` and switches the
    bandwidth update to a random-walk Metropolis step on ``log h``.
    """

    alpha: float = 1.0
    mu0: float = 0.0
    sigma0sq: float = 1.0
    a: float = 1.0
    b: float = 1.0
    k_trunc: Optional[int] = None
    h_prior: str = "invgamma"
    lam: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "sigma0sq", "a", "b", "lam"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a positive finite number")
        if not np.isfinite(self.mu0):
            raise ValueError("mu0 must be finite")
        if self.h_prior not in H_PRIORS:
            raise ValueError(f"h_prior must be one of {H_PRIORS}")
        if self.k_trunc is None:
            object.__setattr__(self, "k_trunc", truncation_level(self.alpha))
        elif int(self.k_trunc) < 1:
            raise ValueError("k_trunc must be at least 1")
        else:
            object.__setattr__(self, "k_trunc", int(self.k_trunc))

    @classmethod
    def from_data(cls, W, **overrides):
        """Default prior with ``sigma0sq = 10 var(W)``."""
        W = np.asarray(W, dtype=float)
        params = dict(sigma0sq=10.0 * float(np.var(W)) if W.size > 1 else 10.0)
        params.update(overrides)
        return cls(**params)

    @property
    def residual_bound(self):
        """Prior-expected mass beyond the truncation level."""
        return (self.alpha / (1.0 + self.alpha)) ** self.k_trunc


@dataclass
class DpmmState:
    sticks: np.ndarray
    weights: np.ndarray
    atoms: np.ndarray
    h: float
    alloc: np.ndarray
    latent: np.ndarray
    step_x: float = 0.5
    step_h: float = 0.2
    accept: dict = field(default_factory=lambda: {"x": [0, 0], "h": [0, 0]})

    def copy(self):
        return replace(self, sticks=self.sticks.copy(), weights=self.weights.copy(),
                       atoms=self.atoms.copy(), alloc=self.alloc.copy(),
                       latent=self.latent.copy(),
                       accept={k: list(v) for k, v in self.accept.items()})

    @property
    def K(self):
        return self.sticks.size

    def is_finite(self):
        return bool(np.isfinite(self.h) and self.h > 0 and np.all(np.isfinite(self.atoms))
                    and np.all(np.isfinite(self.latent)) and np.all(np.isfinite(self.weights)))


def stick_weights(sticks):
    """``pi_k = S_k prod_{l<k} (1 - S_l)``."""
    sticks = np.asarray(sticks, dtype=float)
    remain = np.concatenate([[1.0], np.cumprod(1.0 - sticks[:-1])])
    return sticks * remain


def _draw_h(prior, rng):
    if prior.h_prior == "invgamma":
        return math.sqrt(prior.b / rng.gamma(prior.a))
    return float(rng.exponential(1.0 / prior.lam))


def prior_draw(prior, seed=None, n=0):
    """Draw a state from the prior.

    With ``n > 0`` allocations and latent values for ``n`` observations are
    drawn as well.
    """
    rng = np.random.default_rng(seed)
    K = prior.k_trunc
    sticks = rng.beta(1.0, prior.alpha, size=K)
    sticks[-1] = 1.0
    weights = stick_weights(sticks)
    atoms = prior.mu0 + math.sqrt(prior.sigma0sq) * rng.standard_normal(K)
    h = _draw_h(prior, rng)
    alloc = _categorical(np.broadcast_to(weights, (n, K)), rng)
    latent = atoms[alloc] + h * rng.standard_normal(n)
    return DpmmState(sticks, weights, atoms, h, alloc, latent)


def _categorical(prob, rng):
    """Row-wise categorical draws from unnormalised probabilities."""
    prob = np.asarray(prob)
    if prob.shape[0] == 0:
        return np.zeros(0, dtype=int)
    cum = np.cumsum(prob, axis=1)
    u = rng.random(prob.shape[0]) * cum[:, -1]
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, prob.shape[1] - 1)


# densities ------------------------------------------------------------------


def density_fX(state, x):
    """``f_X(x) = sum_k pi_k Normal(x | mu_k, h^2)``."""
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - state.atoms) / state.h
    comp = np.exp(-0.5 * z ** 2) / (state.h * math.sqrt(2 * math.pi))
    return comp @ state.weights


@lru_cache(maxsize=8)
def _hermite_rule(order):
    nodes, wts = special.roots_hermite(order)
    return nodes, wts / math.sqrt(math.pi)


@lru_cache(maxsize=8)
def _legendre_rule(order):
    return special.roots_legendre(order)


def _convolved_component(error, w, mu, h, order=96):
    """``int Normal(x | mu, h^2) psi(w - x) dx`` for each (w, mu) pair."""
    d = np.asarray(w, dtype=float)[..., None] - np.asarray(mu, dtype=float)
    if error.is_null:
        return np.exp(-0.5 * (d / h) ** 2) / (h * math.sqrt(2 * math.pi))
    if error.kind == "gaussian":
        s = math.sqrt(h ** 2 + error.sigma ** 2)
        return np.exp(-0.5 * (d / s) ** 2) / (s * math.sqrt(2 * math.pi))
    if error.kind == "cauchy":
        return voigt(d, h, error.sigma)
    # integrate over whichever factor is narrower: Gauss-Hermite against the
    # Normal, or Gauss-Legendre in theta with u = sigma tan(theta) across the error
    out = {}
    for m in (order // 2, order):
        if h <= error.sigma:
            nodes, wts = _hermite_rule(m)
            out[m] = error.pdf(d[..., None] - math.sqrt(2) * h * nodes) @ wts
        else:
            nodes, wts = _legendre_rule(m)
            theta = 0.5 * math.pi * nodes
            u = error.sigma * np.tan(theta)
            jac = 0.5 * math.pi * wts * error.sigma / np.cos(theta) ** 2
            comp = np.exp(-0.5 * ((d[..., None] - u) / h) ** 2) / (h * math.sqrt(2 * math.pi))
            out[m] = comp @ (jac * error.pdf(u))
    gap = float(np.max(np.abs(out[order] - out[order // 2])))
    if gap > 1e-6 * max(1.0, float(np.max(out[order]))):
        raise QuadratureError(
            f"convolution quadrature not converged for {error.ident} at h={h:g}", gap)
    return out[order]


def density_fW(state, error, w):
    """``f_W = f_X * psi_sigma`` evaluated componentwise."""
    return _convolved_component(error, w, state.atoms, state.h) @ state.weights


# sampler --------------------------------------------------------------------


def allocation_probs(state, x):
    """Normalised ``P(z_i = k | x_i)`` proportional to ``pi_k Normal(x_i | mu_k, h^2)``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        logp = np.log(state.weights) - 0.5 * ((x[:, None] - state.atoms) / state.h) ** 2
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def _update_latent(state, W, error, rng, tune):
    mu = state.atoms[state.alloc]
    h2 = state.h ** 2
    if error.is_null:
        state.latent = W.copy()
        return
    if error.kind == "gaussian":
        s2 = error.sigma ** 2
        var = 1.0 / (1.0 / h2 + 1.0 / s2)
        mean = var * (mu / h2 + W / s2)
        state.latent = mean + math.sqrt(var) * rng.standard_normal(W.size)
        return
    x = state.latent
    prop = x + state.step_x * rng.standard_normal(W.size)

    def logt(v):
        return error.logpdf(W - v) - 0.5 * (v - mu) ** 2 / h2

    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = logt(prop) - logt(x)
    take = np.log(rng.random(W.size)) < log_ratio
    state.latent = np.where(take, prop, x)
    acc = state.accept["x"]
    acc[0] += int(take.sum())
    acc[1] += W.size
    if tune:
        rate = take.mean()
        if rate < 0.3:
            state.step_x *= 0.9
        elif rate > 0.5:
            state.step_x *= 1.1


def _update_sticks_atoms(state, prior, rng):
    K = state.K
    counts = np.bincount(state.alloc, minlength=K).astype(float)
    later = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0.0]])
    sticks = np.ones(K)
    if K > 1:
        sticks[:-1] = rng.beta(1.0 + counts[:-1], prior.alpha + later[:-1])
    state.sticks = sticks
    state.weights = stick_weights(sticks)

    sums = np.bincount(state.alloc, weights=state.latent, minlength=K)
    h2 = state.h ** 2
    prec = 1.0 / prior.sigma0sq + counts / h2
    mean = (prior.mu0 / prior.sigma0sq + sums / h2) / prec
    state.atoms = mean + rng.standard_normal(K) / np.sqrt(prec)


def _update_h(state, prior, rng, tune):
    resid = state.latent - state.atoms[state.alloc]
    ss = float(resid @ resid)
    n = resid.size
    if prior.h_prior == "invgamma":
        state.h = math.sqrt((prior.b + 0.5 * ss) / rng.gamma(prior.a + 0.5 * n))
        return

    def logt(log_h):
        h = math.exp(log_h)
        # Exp(lam) on h plus the Jacobian of the log transform
        return -n * log_h - 0.5 * ss / h ** 2 - prior.lam * h + log_h

    cur = math.log(state.h)
    prop = cur + state.step_h * rng.standard_normal()
    take = math.log(rng.random()) < logt(prop) - logt(cur)
    if take:
        state.h = math.exp(prop)
    acc = state.accept["h"]
    acc[0] += int(take)
    acc[1] += 1
    if tune:
        state.step_h *= 1.1 if take else 0.95


def gibbs_step(state, W, error, prior, rng=None, tune=False):
    """One blocked-Gibbs sweep; returns a new state.

    Update order, which fixes the order in which ``rng`` is consumed:
    latent values, allocations, sticks, atoms, then the bandwidth. Metropolis
    step sizes adapt only when ``tune`` is set.
    """
    rng = np.random.default_rng(rng)
    W = np.asarray(W, dtype=float).ravel()
    if W.size == 0:
        raise ValueError("empty sample")
    new = state.copy()
    _update_latent(new, W, error, rng, tune)
    standard_sweep(new, prior, rng, tune)
    return new


def standard_sweep(state, prior, rng, tune=False):
    """Allocation, stick, atom and bandwidth updates given the latent values.

    This is an ordinary DPMM density-estimation sweep on ``state.latent``;
    modifies ``state`` in place.
    """
    state.alloc = _categorical(allocation_probs(state, state.latent), rng)
    _update_sticks_atoms(state, prior, rng)
    _update_h(state, prior, rng, tune)
    return state


# chains ---------------------------------------------------------------------


@dataclass(frozen=True)
class ChainConfig:
    iters: int = 2000
    burnin: int = 1000
    thin: int = 1
    seed: int = 0
    grid: Optional[GridSpec] = None
    level: float = 0.9
    p_list: tuple = (2.0,)

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.burnin < 0:
            raise ValueError("burnin must be nonnegative")
        if not self.iters > self.burnin:
            raise ValueError("iters must exceed burnin")
        if self.n_kept < 1:
            raise ValueError("chain configuration keeps zero draws")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")

    @property
    def n_kept(self):
        return len(range(self.burnin, self.iters, self.thin))


@dataclass
class PosteriorSummary:
    x: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    draws: np.ndarray
    h_draws: np.ndarray
    lp_errors: dict
    diagnostics: dict

    @property
    def mass(self):
        return float(np.trapezoid(self.mean, self.x))


def effective_sample_size(chain):
    """Geyer initial-positive-sequence ESS of a scalar chain."""
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n)
    x = x - x.mean()
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * np.var(x))
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(n / max(tau, 1e-12))


def default_grid(W, n_points=512):
    W = np.asarray(W, dtype=float)
    pad = 4.0 * float(np.std(W)) + 1e-6
    return GridSpec(float(W.min() - pad), float(W.max() + pad), n_points)


def initial_state(W, prior, rng):
    state = prior_draw(prior, rng, n=W.size)
    state.latent = W.copy()
    state.h = max(float(np.std(W)) / 2.0, 1e-3) if W.size > 1 else 1.0
    state.alloc = _categorical(allocation_probs(state, state.latent), rng)
    return state


def run_chain(W, error, prior, config=ChainConfig(), truth=None):
    """Run one chain and summarise ``f_X`` on a grid.

    Parameters
    ----------
    truth : callable, optional
        True ``f_X``; when given, ``L_p`` errors of every kept draw are
        recorded for each ``p`` in ``config.p_list``.
    """
    W = np.asarray(W, dtype=float).ravel()
    if W.size == 0:
        raise ValueError("empty sample")
    if not np.all(np.isfinite(W)):
        raise ValueError("sample contains non-finite values")
    rng = np.random.default_rng(config.seed)
    grid = config.grid or default_grid(W)
    x = grid.x
    state = initial_state(W, prior, rng)
    if not state.is_finite():
        raise ChainError("non-finite initial state", state)
    draws = np.empty((config.n_kept, x.size))
    h_draws = np.empty(config.n_kept)
    n_clusters = np.empty(config.n_kept)
    j = 0
    for it in range(config.iters):
        new = gibbs_step(state, W, error, prior, rng, tune=it < config.burnin)
        if not new.is_finite():
            raise ChainError(f"non-finite state at iteration {it}", state)
        state = new
        if it == config.burnin:
            state.accept = {"x": [0, 0], "h": [0, 0]}
        if it >= config.burnin and (it - config.burnin) % config.thin == 0:
            draws[j] = density_fX(state, x)
            h_draws[j] = state.h
            n_clusters[j] = np.unique(state.alloc).size
            j += 1

    lo_q, hi_q = (1 - config.level) / 2, (1 + config.level) / 2
    lp_errors = {}
    if truth is not None:
        f0 = np.asarray(truth(x), dtype=float)
        for p in config.p_list:
            lp_errors[float(p)] = np.array([lp_distance(d, f0, p, x) for d in draws])
    rates = {k: (v[0] / v[1] if v[1] else float("nan")) for k, v in state.accept.items()}
    diagnostics = dict(
        sampler=SAMPLER, k_trunc=prior.k_trunc, residual_bound=prior.residual_bound,
        n_kept=config.n_kept, accept_x=rates["x"], accept_h=rates["h"],
        step_x=state.step_x, step_h=state.step_h,
        ess_h=effective_sample_size(h_draws),
        ess_clusters=effective_sample_size(n_clusters),
        mean_clusters=float(n_clusters.mean()), seed=config.seed)
    return PosteriorSummary(
        x=x, mean=draws.mean(axis=0), lower=np.quantile(draws, lo_q, axis=0),
        upper=np.quantile(draws, hi_q, axis=0), level=config.level, draws=draws,
        h_draws=h_draws, lp_errors=lp_errors, diagnostics=diagnostics)


# divergences ----------------------------------------------------------------


@dataclass(frozen=True)
class DivergenceQuad:
    """Composite Simpson rule on ``[lo, hi]`` with a density floor ``eps``."""

    lo: float = -40.0
    hi: float = 40.0
    n_points: int = 16001
    eps: float = 1e-300

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("hi must exceed lo")
        if self.n_points < 3:
            raise ValueError("need at least three points")


@dataclass(frozen=True)
class Divergences:
    kl: float
    kl2: float
    hellinger: float
    n_floored: int


def divergences(f0W, fW, quad=DivergenceQuad()):
    """KL, second KL moment and Hellinger distance by quadrature.

    The Hellinger distance uses the convention
    ``d_H^2 = (1/2) int (sqrt f - sqrt g)^2`` so that it lies in [0, 1].
    Where ``f0W`` is positive but ``fW`` falls below ``quad.eps`` the ratio
    is floored and counted in ``n_floored``.
    """
    from scipy.integrate import simpson

    x = np.linspace(quad.lo, quad.hi, quad.n_points)
    f0 = np.asarray(f0W(x), dtype=float)
    f1 = np.asarray(fW(x), dtype=float)
    if np.any(f0 < 0) or np.any(f1 < 0):
        raise ValueError("densities must be nonnegative")
    floored = (f0 >= quad.eps) & (f1 < quad.eps)
    n_floored = int(floored.sum())
    if n_floored:
        warnings.warn(f"{n_floored} quadrature points floored at eps={quad.eps:g}",
                      RuntimeWarning)
    lr = np.log(np.maximum(f0, quad.eps)) - np.log(np.maximum(f1, quad.eps))
    live = f0 > 0
    kl = simpson(np.where(live, f0 * lr, 0.0), x=x)
    kl2 = simpson(np.where(live, f0 * lr ** 2, 0.0), x=x)
    h2 = 0.5 * simpson((np.sqrt(f0) - np.sqrt(f1)) ** 2, x=x)
    return Divergences(float(kl), float(kl2), float(math.sqrt(max(h2, 0.0))), n_floored)


def merge_summaries(summaries):
    """Pool kept draws from several chains of the same grid."""
    if not summaries:
        raise ValueError("nothing to merge")
    x = summaries[0].x
    for s in summaries[1:]:
        if s.x.shape != x.shape or not np.allclose(s.x, x):
            raise ValueError("chains use different grids")
    draws = np.concatenate([s.draws for s in summaries])
    level = summaries[0].level
    lo_q, hi_q = (1 - level) / 2, (1 + level) / 2
    lp = {}
    for p in summaries[0].lp_errors:
        lp[p] = np.concatenate([s.lp_errors[p] for s in summaries])
    diag = dict(summaries[0].diagnostics, n_chains=len(summaries), n_kept=draws.shape[0])
    return PosteriorSummary(x, draws.mean(axis=0), np.quantile(draws, lo_q, axis=0),
                            np.quantile(draws, hi_q, axis=0), level, draws,
                            np.concatenate([s.h_draws for s in summaries]), lp, diag)

