"""Flat-top deconvolution kernels defined through their Fourier transforms.

Every kernel here has ``phi_K = 1`` on ``[-c, c]``, a symmetric taper on
``c < |t| < 1`` and ``phi_K = 0`` beyond, so all polynomial moments of ``K``
of order ``r >= 1`` vanish whenever they exist.

Two tapers are available:

``polynomial``
    ``phi_K`` is the indicator of ``[-b, b]`` convolved with the density of a
    sum of ``degree`` uniforms on ``(-delta/degree, delta/degree)``, where
    ``b = (1 + c)/2`` and ``delta = (1 - c)/2``. The taper is a piecewise
    polynomial of that degree and

        K(z) = sin(b z) / (pi z) * sinc(delta z / degree)^degree,

    so ``|K(z)| = O(|z|^-(degree + 1))`` and moments of order ``< degree``
    are finite.

``smooth_exp``
    ``C^infinity`` taper built from ``exp(-1/s)``; ``K`` is evaluated
    numerically and decays faster than any power but only like
    ``exp(-c |z|^(1/2))``.
"""

import functools
import math
import threading
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, interpolate, special

from .fourier import DEFAULT_POINTS, HermitianInverter, hermitian_inverse, uniform_inverse_fft

TAPERS = ("polynomial", "smooth_exp")


class QuadratureError(RuntimeError):
    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class BandwidthTooSmall(ValueError):
    """Raised when ``1/|phi_sigma(1/h)|`` exceeds the magnitude cap."""


@dataclass(frozen=True)
class DeconvKernel:
    flat_radius: float = 0.5
    taper: str = "polynomial"
    taper_degree: int = 12

    def __post_init__(self):
        if not 0 < self.flat_radius < 1:
            raise ValueError("flat_radius must lie in (0, 1)")
        if self.taper not in TAPERS:
            raise ValueError(f"unknown taper {self.taper!r}")
        if self.taper == "polynomial" and int(self.taper_degree) < 2:
            raise ValueError("taper_degree must be at least 2")

    @property
    def ident(self):
        if self.taper == "polynomial":
            return f"flat_top(c={self.flat_radius:g},poly{self.taper_degree})"
        return f"flat_top(c={self.flat_radius:g},smooth_exp)"

    @property
    def _b(self):
        return 0.5 * (1.0 + self.flat_radius)

    @property
    def _delta(self):
        return 0.5 * (1.0 - self.flat_radius)

    @cached_property
    def _spline_cdf(self):
        d = int(self.taper_degree)
        basis = interpolate.BSpline.basis_element(np.arange(d + 1.0), extrapolate=False)
        return basis.antiderivative(), basis

    def _mollifier_cdf(self, s):
        d = int(self.taper_degree)
        u = s * d / (2 * self._delta) + 0.5 * d
        cdf, _ = self._spline_cdf
        out = cdf(np.clip(u, 0.0, d))
        return np.where(u <= 0, 0.0, np.where(u >= d, 1.0, out))

    def _mollifier_pdf(self, s):
        d = int(self.taper_degree)
        u = s * d / (2 * self._delta) + 0.5 * d
        _, pdf = self._spline_cdf
        out = np.nan_to_num(pdf(np.clip(u, 0.0, d)))
        return np.where((u <= 0) | (u >= d), 0.0, out) * d / (2 * self._delta)

    def phi(self, t):
        """Fourier transform ``phi_K(t)``."""
        a = np.abs(np.asarray(t, dtype=float))
        c = self.flat_radius
        if self.taper == "polynomial":
            b = self._b
            val = self._mollifier_cdf(a + b) - self._mollifier_cdf(a - b)
        else:
            s = np.clip((a - c) / (1 - c), 0.0, 1.0)
            up, down = _exp_step(1 - s), _exp_step(s)
            with np.errstate(invalid="ignore"):
                val = up / (up + down)
        return np.where(a <= c, 1.0, np.where(a >= 1, 0.0, val))

    def phi_derivative(self, t):
        t = np.asarray(t, dtype=float)
        a = np.abs(t)
        c = self.flat_radius
        if self.taper == "polynomial":
            b = self._b
            val = self._mollifier_pdf(a + b) - self._mollifier_pdf(a - b)
        else:
            s = np.clip((a - c) / (1 - c), 1e-300, 1 - 1e-16)
            # d/ds of e(1-s)/(e(1-s)+e(s)) with e(s) = exp(-1/s)
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                g = 1.0 / (1 - s) - 1.0 / s
                lg = -1 / (1 - s) ** 2 - 1 / s ** 2
                val = np.exp(g) * lg / (1 + np.exp(g)) ** 2 / (1 - c)
            val = np.nan_to_num(val)
        val = np.where((a <= c) | (a >= 1), 0.0, val)
        return np.sign(t) * val

    def K(self, z):
        """Kernel ``K(z) = (2 pi)^-1 int exp(-i t z) phi_K(t) dt``."""
        z = np.asarray(z, dtype=float)
        if self.taper == "polynomial":
            d = int(self.taper_degree)
            b = self._b
            return (b / np.pi) * np.sinc(b * z / np.pi) * np.sinc(self._delta * z / (d * np.pi)) ** d
        return hermitian_inverse(self.phi, z, 1.0)

    @cached_property
    def cached_phiK(self):
        t = np.linspace(-1.0, 1.0, 2049)
        return t, self.phi(t)


def _exp_step(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = s > 0
    out[m] = np.exp(-1.0 / s[m])
    return out


def make_flat_top_kernel(flat_radius=0.5, taper="polynomial", taper_degree=12):
    return DeconvKernel(float(flat_radius), taper, int(taper_degree))


def eval_K(kernel, z):
    return kernel.K(z)


# moments --------------------------------------------------------------------


@dataclass(frozen=True)
class QuadSpec:
    """Quadrature settings for kernel moments.

    Nodes are ``offset + k * step``. Because ``z^r K(z)`` is band limited to
    ``|t| <= 1``, the infinite trapezoid sum with ``step < 2 pi`` equals the
    integral exactly for every offset, so the only error is truncation at
    ``|z| <= z_max``.
    """

    step: float = 1.0
    tail_tol: float = 1e-14
    z_max: float = 0.0
    tol: float = 1e-6
    offset: float = 0.0


SHIFTED_QUAD = QuadSpec(step=0.7, offset=0.23)
MAX_MOMENT_NODES = 2_000_000


def _moment_cutoff(kernel, r, tail_tol):
    d = int(kernel.taper_degree)
    if kernel.taper != "polynomial":
        return None
    if r >= d - 1:
        raise QuadratureError(f"moment of order {r} needs taper_degree > {r + 1}",
                              float("nan"))
    const = (2 / np.pi) * (d / kernel._delta) ** d / (d - r)
    return (const / tail_tol) ** (1.0 / (d - r))


def kernel_moment(kernel, r, quad=QuadSpec()):
    """Numerical ``int z^r K(z) dz`` by band-limited trapezoid quadrature."""
    r = int(r)
    if r < 0:
        raise ValueError("r must be nonnegative")
    if not 0 < quad.step < 2 * np.pi:
        raise ValueError("step must lie in (0, 2 pi)")
    z_max = quad.z_max or _moment_cutoff(kernel, r, quad.tail_tol)
    if z_max is None:
        z_max = 2000.0
    if z_max / quad.step > MAX_MOMENT_NODES:
        raise QuadratureError(
            f"moment r={r} needs |z| up to {z_max:.3g} for tail {quad.tail_tol:g}; "
            f"more than {MAX_MOMENT_NODES:.0e} nodes", float("nan"))
    k_max = int(np.ceil(z_max / quad.step)) + 1
    z = quad.offset + np.arange(-k_max, k_max + 1) * quad.step
    z = z[np.abs(z) <= z_max]
    terms = z ** r * kernel.K(z) * quad.step
    value = math.fsum(terms)
    if kernel.taper != "polynomial":
        # no closed-form tail bound; use the size of the outermost terms
        edge = np.abs(z) > z_max - 25 * quad.step
        tail = float(np.abs(terms[edge]).sum()) * z.size / max(int(edge.sum()), 1)
        if tail > quad.tol:
            raise QuadratureError(
                f"moment r={r} not converged (tail estimate {tail:.3g})", tail)
    return value


def kernel_moment_shifted(kernel, r):
    """Same moment on a different node set (step 0.7, shifted origin)."""
    return kernel_moment(kernel, r, SHIFTED_QUAD)


def kernel_moment_adaptive(kernel, r, z_max=200.0):
    """Independent check of a moment with adaptive quadrature on ``[-z_max, z_max]``."""
    val, _ = integrate.quad(lambda z: z ** r * float(kernel.K(z)), -z_max, z_max, limit=2000)
    return val


# effective deconvolution kernel --------------------------------------------

MAGNITUDE_CAP = 1e12


def kn_spectrum(kernel, error, h, magnitude_cap=MAGNITUDE_CAP):
    """Return ``G(t) = phi_K(t) / phi_sigma(t/h)`` after the overflow guard."""
    if h <= 0:
        raise ValueError("h must be positive")
    amp = -float(error.log_abs_cf(1.0 / h))
    if amp > np.log(magnitude_cap):
        raise BandwidthTooSmall(
            f"bandwidth too small for error scale: 1/|phi_sigma(1/h)| = exp({amp:.3g}) "
            f"exceeds cap {magnitude_cap:g} (h={h:g}, {error.ident})")

    def spectrum(t):
        return kernel.phi(t) / error.cf(np.asarray(t) / h)

    return spectrum


def eval_Kn(kernel, error, h, x, n_points=DEFAULT_POINTS, magnitude_cap=MAGNITUDE_CAP):
    """Effective kernel ``K_n(x) = (2 pi)^-1 int exp(-i t x) phi_K(t) / phi_sigma(t/h) dt``."""
    return hermitian_inverse(kn_spectrum(kernel, error, h, magnitude_cap), x, 1.0, n_points)


def eval_Kn_derivative(kernel, error, h, x, n_points=DEFAULT_POINTS, magnitude_cap=MAGNITUDE_CAP):
    return hermitian_inverse(kn_spectrum(kernel, error, h, magnitude_cap), x, 1.0, n_points,
                             derivative=1)


def kn_tail_mass(kernel, error, h, w, magnitude_cap=MAGNITUDE_CAP):
    """One-sided signed tail ``int_w^inf K_n(z) dz``.

    Uses ``int_{-w}^{w} K_n = (2/pi) int_0^1 Re G(t) sin(w t) / t dt`` with the
    ``G(0) Si(w)`` part split off so the remaining integrand is bounded; the
    oscillatory piece goes to QUADPACK's QAWO rule.
    """
    spectrum = kn_spectrum(kernel, error, h, magnitude_cap)
    g0 = float(np.real(spectrum(0.0)))

    def rest(t):
        return (float(np.real(spectrum(t))) - g0) / t if t > 0 else 0.0

    out = np.empty(np.size(w))
    for i, wi in enumerate(np.atleast_1d(np.asarray(w, dtype=float))):
        val, _ = integrate.quad(rest, 0.0, 1.0, weight="sin", wvar=wi, limit=200)
        out[i] = 0.5 * g0 - (g0 * special.sici(wi)[0] + val) / np.pi
    return out if np.ndim(w) else float(out[0])


def kn_tail_width(kernel, error, h, tol=2.5e-4, w_max=1e6, magnitude_cap=MAGNITUDE_CAP):
    """Smallest ``w`` (in units of ``h``) beyond which every one-sided tail of
    ``K_n`` has signed mass below ``tol`` in absolute value."""
    return _kn_tail_width(kernel, error, id(error.cf_func), float(h), float(tol), float(w_max),
                          float(magnitude_cap))


@functools.lru_cache(maxsize=256)
def _kn_tail_width(kernel, error, cf_id, h, tol, w_max, cap):
    # the tail envelope is nonincreasing, so stop a factor 4 past the last
    # violation and report the first grid point after it
    grid = np.geomspace(0.5, w_max, 300)
    last_bad = -1
    for i, w in enumerate(grid):
        if abs(kn_tail_mass(kernel, error, h, w, cap)) >= tol:
            last_bad = i
        elif w > 4 * grid[max(last_bad, 0)]:
            return float(grid[last_bad + 1])
    raise QuadratureError(f"K_n tail exceeds {tol:g} out to {w_max:g}", float(grid[last_bad]))


_KN_CACHE = {}
_KN_LOCK = threading.Lock()


def kn_on_grid(kernel, error, h, dz=0.05, half_width=400.0, magnitude_cap=MAGNITUDE_CAP):
    """``K_n`` sampled on a uniform symmetric grid, cached per (kernel, error, h, grid)."""
    key = (kernel, error, id(error.cf_func), float(h), float(dz), float(half_width))
    with _KN_LOCK:
        hit = _KN_CACHE.get(key)
    if hit is not None:
        return hit
    n_out = 2 * int(np.ceil(half_width / dz))
    z, vals = uniform_inverse_fft(kn_spectrum(kernel, error, h, magnitude_cap), 1.0, dz, n_out,
                                  dt=1.0 / 4096)
    z.setflags(write=False)
    vals.setflags(write=False)
    with _KN_LOCK:
        if len(_KN_CACHE) > 256:
            _KN_CACHE.clear()
        _KN_CACHE[key] = (z, vals)
    return z, vals


def total_variation_Kn(kernel, error, h, half_width=None, n_points=DEFAULT_POINTS,
                       magnitude_cap=MAGNITUDE_CAP):
    """Total variation ``int |K_n'(x)| dx``.

    The derivative is located on a fine grid, its sign changes refined, and the
    variation summed as ``sum |K_n(e_{j+1}) - K_n(e_j)|`` over consecutive
    extrema, which is exact between sign changes.
    """
    from scipy.optimize import brentq

    if half_width is None:
        half_width = _tv_half_width(kernel)
    spec = kn_spectrum(kernel, error, h, magnitude_cap)
    dz = 0.02
    z, dk = uniform_inverse_fft(lambda t: -1j * t * spec(t), 1.0, dz,
                                2 * int(np.ceil(half_width / dz)) + 2, dt=1.0 / 4096)
    keep = (z >= 0) & (z <= half_width)
    x, dk = z[keep], dk[keep]
    inv = HermitianInverter(spec, 1.0, n_points)
    f = lambda v: float(inv(np.array([v]), derivative=1)[0])
    roots = [0.0]
    floor = 1e-13 * np.abs(dk).max()
    flips = np.nonzero((np.sign(dk[1:]) * np.sign(dk[:-1]) < 0)
                       & (np.maximum(np.abs(dk[1:]), np.abs(dk[:-1])) > floor))[0]
    for i in flips:
        a, b = f(x[i]), f(x[i + 1])
        if a * b < 0:
            roots.append(brentq(f, x[i], x[i + 1], xtol=1e-13))
    roots.append(half_width)
    kvals = inv(np.array(roots))
    # K_n is even: the variation on the negative axis mirrors the positive one
    return 2.0 * float(np.abs(np.diff(kvals)).sum())


def _tv_half_width(kernel):
    if kernel.taper == "polynomial":
        d = int(kernel.taper_degree)
        return float(min(400.0, max(60.0, 4 * d / kernel._delta)))
    return 400.0


def parseval_residual(kernel, error, h, magnitude_cap=MAGNITUDE_CAP):
    """Relative gap between ``int K_n^2`` and ``(2 pi)^-1 int |phi_K / phi_sigma(./h)|^2``."""
    z, vals = kn_on_grid(kernel, error, h, magnitude_cap=magnitude_cap)
    dz = z[1] - z[0]
    lhs = float(np.sum(vals ** 2) * dz)
    spec = kn_spectrum(kernel, error, h, magnitude_cap)
    rhs = integrate.quad(lambda t: abs(spec(np.array([t]))[0]) ** 2, 0.0, 1.0,
                         limit=500, epsabs=1e-14, epsrel=1e-12)[0] / np.pi
    return abs(lhs - rhs) / rhs, lhs, rhs


def kn_sup_bound(kernel, error, h, magnitude_cap=MAGNITUDE_CAP):
    """Upper bound ``(2 pi)^-1 int |phi_K(t) / phi_sigma(t/h)| dt`` for ``sup |K_n|``."""
    spec = kn_spectrum(kernel, error, h, magnitude_cap)
    return integrate.quad(lambda t: abs(spec(np.array([t]))[0]), 0.0, 1.0, limit=500)[0] / np.pi
