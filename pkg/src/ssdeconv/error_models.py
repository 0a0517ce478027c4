"""Known supersmooth measurement-error densities.

An :class:`ErrorModel` carries the error scale together with the constants of
the supersmooth envelope

    d0 |t|^beta0 exp(-|t|^beta / varrho) <= |phi(t)| <= d1 |t|^beta1 exp(-|t|^beta / varrho).

The built-in Gaussian and Cauchy models use the parameterisations for which
both sides of the envelope are equalities.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import interpolate, special

from .fourier import hermitian_inverse

KINDS = ("gaussian", "cauchy", "custom")


@dataclass(frozen=True)
class ErrorModel:
    """Error density ``psi_sigma`` and its characteristic function.

    ``sigma = 0`` for a built-in kind gives the degenerate no-error model whose
    characteristic function is identically one.
    """

    kind: str
    sigma: float
    beta: float
    beta0: float = 0.0
    beta1: float = 0.0
    varrho: float = np.inf
    d0: float = 1.0
    d1: float = 1.0
    cf_func: Optional[Callable] = field(default=None, compare=False, repr=False)
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown error kind {self.kind!r}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError("sigma must be a finite nonnegative number")
        if self.kind == "custom":
            if self.cf_func is None:
                raise ValueError("custom error models need cf_func")
            if self.sigma <= 0:
                raise ValueError("custom error models need sigma > 0")
        if self.beta <= 0 or self.varrho <= 0 or self.d0 <= 0 or self.d1 <= 0:
            raise ValueError("beta, varrho, d0, d1 must be positive")

    # construction -----------------------------------------------------------

    @classmethod
    def gaussian(cls, sigma, **envelope):
        """Normal(0, sigma^2): ``phi(t) = exp(-sigma^2 t^2 / 2)``, beta=2, varrho=2/sigma^2."""
        varrho = 2.0 / sigma ** 2 if sigma ** 2 > 0 else np.inf
        params = dict(beta=2.0, varrho=varrho)
        params.update(envelope)
        return cls("gaussian", float(sigma), **params)

    @classmethod
    def cauchy(cls, sigma, **envelope):
        """Cauchy with median 0 and scale sigma: ``phi(t) = exp(-sigma |t|)``."""
        varrho = float(np.divide(1.0, sigma)) if sigma > 0 else np.inf
        params = dict(beta=1.0, varrho=varrho)
        params.update(envelope)
        return cls("cauchy", float(sigma), **params)

    @classmethod
    def custom(cls, cf, sigma, beta, varrho, beta0=0.0, beta1=0.0, d0=1.0, d1=1.0, name="custom"):
        """Error model given by a closed-form characteristic function.

        The density is recovered by numerical Fourier inversion.
        """
        return cls("custom", float(sigma), beta, beta0, beta1, varrho, d0, d1, cf, name)

    @classmethod
    def none(cls):
        """No measurement error."""
        return cls.gaussian(0.0)

    @property
    def is_null(self):
        return self.kind != "custom" and self.sigma == 0

    @property
    def ident(self):
        if self.kind == "custom":
            return f"custom:{self.name}(sigma={self.sigma:g})"
        return f"{self.kind}(sigma={self.sigma:g})"

    # characteristic function -----------------------------------------------

    def cf(self, t):
        t = np.asarray(t, dtype=float)
        if not np.all(np.isfinite(t)):
            raise ValueError("t must be finite")
        if self.kind == "custom":
            return np.asarray(self.cf_func(t), dtype=complex)
        return np.exp(self.log_abs_cf(t)).astype(complex)

    def log_abs_cf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            return -0.5 * self.sigma ** 2 * t ** 2
        if self.kind == "cauchy":
            return -self.sigma * np.abs(t)
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.cf(t)))

    # density ----------------------------------------------------------------

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        if self.is_null:
            raise ValueError("the no-error model has no density")
        if self.kind == "gaussian":
            return np.exp(-0.5 * (u / self.sigma) ** 2) / (self.sigma * np.sqrt(2 * np.pi))
        if self.kind == "cauchy":
            return 1.0 / (np.pi * self.sigma * (1.0 + (u / self.sigma) ** 2))
        # zero outside the tabulated range
        return np.clip(np.nan_to_num(self._table(u), nan=0.0), 0.0, None)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            return -0.5 * (u / self.sigma) ** 2 - np.log(self.sigma * np.sqrt(2 * np.pi))
        if self.kind == "cauchy":
            return -np.log(np.pi * self.sigma) - np.log1p((u / self.sigma) ** 2)
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(u))

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        if self.is_null:
            return (u >= 0).astype(float)
        if self.kind == "gaussian":
            return special.ndtr(u / self.sigma)
        if self.kind == "cauchy":
            return 0.5 + np.arctan(u / self.sigma) / np.pi
        grid, table = self._cdf_table
        inside = np.clip(self._antiderivative(np.clip(u, grid[0], grid[-1])), 0.0, None)
        return np.clip(inside / self._cdf_mass, 0.0, 1.0)

    def pdf_inversion(self, u):
        """Density by direct numerical Fourier inversion (slow, accurate)."""
        return hermitian_inverse(self.cf, u, self.cf_cutoff())

    def cf_cutoff(self, floor=1e-17):
        """Frequency beyond which the upper envelope drops below ``floor``."""
        t = (self.varrho * np.log(self.d1 / floor)) ** (1.0 / self.beta)
        # polynomial prefactor can only push the cutoff outwards a little
        return float(t * 1.5 + 1.0)

    @cached_property
    def _table(self):
        # custom densities are tabulated once by inversion on a wide grid
        half = 60.0 * self.sigma
        u = np.linspace(-half, half, 6001)
        vals = self.pdf_inversion(u)
        return interpolate.CubicSpline(u, vals, extrapolate=False)

    # sampling ---------------------------------------------------------------

    def sample(self, n, seed=None):
        n = int(n)
        if n < 1:
            raise ValueError("n must be at least 1")
        rng = np.random.default_rng(seed)
        if self.is_null:
            return np.zeros(n)
        if self.kind == "gaussian":
            return self.sigma * rng.standard_normal(n)
        if self.kind == "cauchy":
            return self.sigma * rng.standard_cauchy(n)
        return self._inverse_cdf(rng.random(n))

    @cached_property
    def _cdf_table(self):
        # exact integral of the cubic interpolant, monotone up to round-off
        spline = self._table
        u = spline.x
        cdf = np.maximum.accumulate(np.clip(self._antiderivative(u), 0.0, None))
        return u, cdf / cdf[-1]

    @cached_property
    def _antiderivative(self):
        return self._table.antiderivative()

    @cached_property
    def _cdf_mass(self):
        return float(self._antiderivative(self._table.x[-1]))

    @cached_property
    def _inverse_cdf(self):
        u, cdf = self._cdf_table
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        return interpolate.interp1d(cdf[keep], u[keep], bounds_error=False,
                                    fill_value=(u[0], u[-1]))


@dataclass
class EnvelopeReport:
    t: np.ndarray
    lower_ok: np.ndarray
    upper_ok: np.ndarray

    @property
    def violations(self):
        """List of ``(t, side)`` pairs where the envelope fails."""
        out = [(float(t), "lower") for t in self.t[~self.lower_ok]]
        out += [(float(t), "upper") for t in self.t[~self.upper_ok]]
        return sorted(out)

    @property
    def ok(self):
        return bool(self.lower_ok.all() and self.upper_ok.all())


def check_supersmooth_envelope(model, t_grid, rtol=1e-10):
    """Compare ``|phi|`` with the declared supersmooth envelope on ``t_grid``.

    Comparison is done on the log scale so deep tails do not underflow. The
    check is advisory; failures are reported, not raised.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size == 0:
        raise ValueError("t_grid is empty")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly positive and increasing")
    log_phi = model.log_abs_cf(t)
    core = -t ** model.beta / model.varrho
    log_lo = np.log(model.d0) + model.beta0 * np.log(t) + core
    log_hi = np.log(model.d1) + model.beta1 * np.log(t) + core
    slack = rtol * np.maximum(1.0, np.abs(core))
    return EnvelopeReport(t, log_lo <= log_phi + slack, log_phi <= log_hi + slack)


def cf_error(model, t):
    return model.cf(t)


def pdf_error(model, u):
    return model.pdf(u)


def sample_error(model, n, seed=None):
    return model.sample(n, seed)


def voigt(w, h, sigma):
    """Density of Normal(0, h^2) convolved with Cauchy(0, sigma) at ``w``."""
    return special.voigt_profile(w, h, sigma)
