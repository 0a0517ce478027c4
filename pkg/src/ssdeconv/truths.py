"""True densities for simulation experiments.

Three families are provided:

``gauss_mixture``
    Finite Normal mixture; exponentially decaying tails, infinitely smooth.
``heavy_tail``
    Location-scale Student t with ``df = c2 - 1``, so that
    ``f(z) <= c1 |z|^-c2`` for every ``z != 0``.
``kink_bump``
    ``f(x) proportional to (1 - (x/s)^2)^2`` on ``[-s, s]`` (a rescaled
    Beta(3, 3)). The density and its first derivative vanish at the ends but
    the second derivative jumps, which makes it a smoothness-2 surrogate.

Admissibility for the accelerated regime is documented, not checked
numerically. That regime asks for ``int (|f^(k)| / f)^((2 eta + rho)/k) f``
to be finite. Normal mixtures meet it: the log-derivative ratios grow
polynomially against Gaussian tails. ``kink_bump`` does not, since
``f'/f ~ 2/(s - |x|)`` at the ends of its support, so it serves only as a
surrogate with a known smoothness degree.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special, stats

from .error_models import voigt

KINDS = ("gauss_mixture", "heavy_tail", "kink_bump")


@dataclass(frozen=True)
class TailCertificate:
    """``f(z) <= c1 |z|^-c2`` (polynomial) or ``c1 exp(-c2 |z|^c3)`` for ``|z| >= T``."""

    kind: str
    c1: float
    c2: float
    T: float
    c3: float = float("nan")

    def bound(self, z):
        z = np.abs(np.asarray(z, dtype=float))
        if self.kind == "polynomial":
            return self.c1 * z ** (-self.c2)
        return self.c1 * np.exp(-self.c2 * z ** self.c3)


@dataclass(frozen=True)
class TrueDensity:
    kind: str
    params: dict = field(hash=False)
    declared_eta: float = math.inf
    tail: TailCertificate = None

    # distribution -----------------------------------------------------------

    @cached_property
    def _dist(self):
        p = self.params
        if self.kind == "heavy_tail":
            return stats.t(df=p["c2"] - 1.0, loc=p["loc"], scale=p["scale"])
        if self.kind == "kink_bump":
            s = p["scale"]
            return stats.beta(3.0, 3.0, loc=-s, scale=2 * s)
        return None

    def _mix(self):
        p = self.params
        return np.asarray(p["weights"]), np.asarray(p["means"]), np.asarray(p["sds"])

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind != "gauss_mixture":
            return self._dist.pdf(x)
        w, m, s = self._mix()
        z = (x[..., None] - m) / s
        return (np.exp(-0.5 * z ** 2) / (s * math.sqrt(2 * math.pi))) @ w

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind != "gauss_mixture":
            return self._dist.cdf(x)
        w, m, s = self._mix()
        return special.ndtr((x[..., None] - m) / s) @ w

    def ppf(self, q):
        if self.kind != "gauss_mixture":
            return self._dist.ppf(q)
        from scipy.optimize import brentq

        w, m, s = self._mix()
        lo, hi = float((m - 40 * s).min()), float((m + 40 * s).max())
        return np.array([brentq(lambda v: float(self.cdf(v)) - qi, lo, hi, xtol=1e-12)
                         for qi in np.atleast_1d(q)]).reshape(np.shape(q))

    def sample(self, n, seed=None):
        rng = np.random.default_rng(seed)
        n = int(n)
        if n < 1:
            raise ValueError("n must be at least 1")
        if self.kind != "gauss_mixture":
            return self._dist.rvs(size=n, random_state=rng)
        w, m, s = self._mix()
        comp = rng.choice(w.size, size=n, p=w)
        return m[comp] + s[comp] * rng.standard_normal(n)

    @property
    def mean(self):
        if self.kind == "gauss_mixture":
            w, m, _ = self._mix()
            return float(w @ m)
        return float(self._dist.mean())

    @property
    def var(self):
        if self.kind == "gauss_mixture":
            w, m, s = self._mix()
            return float(w @ (s ** 2 + m ** 2) - (w @ m) ** 2)
        return float(self._dist.var())

    def support(self, mass=0.9999):
        """Central interval carrying ``mass`` of the distribution."""
        if self.kind == "kink_bump":
            s = self.params["scale"]
            return -s, s
        q = 0.5 * (1.0 - mass)
        return float(self.ppf(q)), float(self.ppf(1.0 - q))

    # contaminated density ---------------------------------------------------

    def convolved_pdf(self, error, w):
        """Density of ``W = X + U`` with ``U`` drawn from ``error``."""
        w = np.asarray(w, dtype=float)
        if error.is_null:
            return self.pdf(w)
        if self.kind == "gauss_mixture" and error.kind in ("gaussian", "cauchy"):
            wt, m, s = self._mix()
            d = w[..., None] - m
            if error.kind == "gaussian":
                tot = np.sqrt(s ** 2 + error.sigma ** 2)
                return (np.exp(-0.5 * (d / tot) ** 2) / (tot * math.sqrt(2 * math.pi))) @ wt
            return voigt(d, s, error.sigma) @ wt
        return self._convolve(error, w, self.pdf, error.pdf)

    def convolved_cdf(self, error, w):
        w = np.asarray(w, dtype=float)
        if error.is_null:
            return self.cdf(w)
        if self.kind == "gauss_mixture" and error.kind == "gaussian":
            wt, m, s = self._mix()
            tot = np.sqrt(s ** 2 + error.sigma ** 2)
            return special.ndtr((w[..., None] - m) / tot) @ wt
        return self._convolve(error, w, self.cdf, error.cdf)

    def _convolve(self, error, w, f_x, f_u, order=400):
        # a compact truth is integrated over its support, otherwise over the error
        if self.kind == "kink_bump":
            s = self.params["scale"]
            nodes, wts = special.roots_legendre(order)
            x = s * nodes
            return (f_u(w[..., None] - x) * (s * wts * self.pdf(x))).sum(axis=-1)
        if error.kind == "gaussian":
            nodes, wts = special.roots_hermite(order // 4)
            u = math.sqrt(2) * error.sigma * nodes
            return f_x(w[..., None] - u) @ (wts / math.sqrt(math.pi))
        if error.kind == "cauchy":
            # u = sigma tan(theta) turns the Cauchy weight into a uniform one
            nodes, wts = special.roots_legendre(order)
            theta = 0.5 * math.pi * nodes
            u = error.sigma * np.tan(theta)
            return f_x(w[..., None] - u) @ (0.5 * wts)
        half = 60.0 * error.sigma
        nodes, wts = special.roots_legendre(order)
        u = half * nodes
        return f_x(w[..., None] - u) @ (half * wts * error.pdf(u))


def gauss_mixture(weights, means, sds):
    """Normal mixture; mixture weights must be positive and sum to one."""
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    m = np.atleast_1d(np.asarray(means, dtype=float))
    s = np.atleast_1d(np.asarray(sds, dtype=float))
    if not (w.shape == m.shape == s.shape) or w.size == 0:
        raise ValueError("weights, means and sds must have the same nonzero length")
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("mixture weights must be positive and sum to one")
    if np.any(s <= 0):
        raise ValueError("component sds must be positive")
    # exponential tail envelope: each component is bounded by a Gaussian
    # centred at zero once |x| exceeds twice the largest |mean|
    T = max(1.0, 2.0 * float(np.abs(m).max()))
    smax = float(s.max())
    c2 = 1.0 / (8.0 * smax ** 2)
    c1 = float((w / (s * math.sqrt(2 * math.pi))).sum())
    tail = TailCertificate("exponential", c1, c2, T, c3=2.0)
    params = dict(weights=tuple(w), means=tuple(m), sds=tuple(s))
    return TrueDensity("gauss_mixture", params, math.inf, tail)


def heavy_tail(c2=3.0, loc=0.0, scale=1.0):
    """Student t with ``df = c2 - 1``; tail index ``c2`` must exceed 1."""
    if not c2 > 1:
        raise ValueError("tail index c2 must exceed 1")
    if scale <= 0:
        raise ValueError("scale must be positive")
    nu = c2 - 1.0
    const = math.exp(special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)) / math.sqrt(nu * math.pi)
    c1 = const * nu ** ((nu + 1) / 2) * scale ** nu
    tail = TailCertificate("polynomial", c1, c2, T=1.0)
    return TrueDensity("heavy_tail", dict(c2=float(c2), loc=float(loc), scale=float(scale)),
                       math.inf, tail)


def kink_bump(scale=1.0):
    if scale <= 0:
        raise ValueError("scale must be positive")
    tail = TailCertificate("exponential", 1.0, 1.0, T=float(scale), c3=1.0)
    return TrueDensity("kink_bump", dict(scale=float(scale)), 2.0, tail)


def make_truth(spec):
    """Build a :class:`TrueDensity` from a mapping with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "gauss_mixture":
        return gauss_mixture(spec["weights"], spec["means"], spec["sds"])
    if kind == "heavy_tail":
        return heavy_tail(**spec)
    if kind == "kink_bump":
        return kink_bump(**spec)
    raise ValueError(f"unknown truth kind {kind!r}; expected one of {KINDS}")
