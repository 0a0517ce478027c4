"""Trapezoid-rule Fourier inversion on compactly supported frequency bands."""

import numpy as np

DEFAULT_POINTS = 2 ** 14
_CHUNK = 1 << 22


def trapezoid_nodes(t_max, n_intervals=DEFAULT_POINTS):
    """Nodes and weights of the uniform trapezoid rule on ``[0, t_max]``."""
    t = np.linspace(0.0, t_max, n_intervals + 1)
    w = np.full(t.shape, t_max / n_intervals)
    w[0] *= 0.5
    w[-1] *= 0.5
    return t, w


def hermitian_inverse(spectrum, x, t_max, n_intervals=DEFAULT_POINTS, derivative=0):
    """Inverse Fourier transform of a Hermitian spectrum supported on ``[-t_max, t_max]``.

    Evaluates ``(2 pi)^-1 int exp(-i t x) G(t) dt`` as
    ``pi^-1 int_0^t_max Re{exp(-i t x) G(t)} dt``. With ``derivative=1`` the
    x-derivative is returned instead.

    Parameters
    ----------
    spectrum : callable
        Vectorised ``G(t)`` for ``t >= 0``; may return complex values.
    x : array_like
        Evaluation points.
    t_max : float
        Upper end of the frequency band; ``G`` must vanish beyond it.
    n_intervals : int
        Number of trapezoid intervals.
    derivative : {0, 1}
        Order of the x-derivative.
    """
    x = np.asarray(x, dtype=float)
    t, w = trapezoid_nodes(t_max, n_intervals)
    g = np.asarray(spectrum(t), dtype=complex) * w
    if derivative == 1:
        g = g * (-1j * t)
    elif derivative != 0:
        raise ValueError("derivative must be 0 or 1")
    flat = x.ravel()
    out = np.empty(flat.shape)
    step = max(1, _CHUNK // t.size)
    for start in range(0, flat.size, step):
        block = flat[start:start + step]
        phase = np.exp(-1j * np.outer(block, t))
        out[start:start + step] = (phase @ g).real / np.pi
    return out.reshape(x.shape)


class HermitianInverter:
    """:func:`hermitian_inverse` with the spectrum sampled once up front."""

    def __init__(self, spectrum, t_max, n_intervals=DEFAULT_POINTS):
        self.t, w = trapezoid_nodes(t_max, n_intervals)
        self.g = np.asarray(spectrum(self.t), dtype=complex) * w
        self.gd = self.g * (-1j * self.t)

    def __call__(self, x, derivative=0):
        x = np.asarray(x, dtype=float)
        g = self.g if derivative == 0 else self.gd
        flat = x.ravel()
        out = np.empty(flat.shape)
        step = max(1, _CHUNK // self.t.size)
        for start in range(0, flat.size, step):
            block = flat[start:start + step]
            out[start:start + step] = (np.exp(-1j * np.outer(block, self.t)) @ g).real / np.pi
        return out.reshape(x.shape)


def richardson_check(spectrum, x, t_max, n_intervals=DEFAULT_POINTS):
    """Largest change when the trapezoid point count is halved."""
    fine = hermitian_inverse(spectrum, x, t_max, n_intervals)
    coarse = hermitian_inverse(spectrum, x, t_max, n_intervals // 2)
    return float(np.max(np.abs(fine - coarse)))


def uniform_inverse_fft(spectrum, t_max, dz, n_out, dt=None):
    """Inverse transform sampled on the symmetric grid ``dz * (-n_out//2 .. n_out//2 - 1)``.

    Uses a zero-padded FFT so the output spacing ``dz`` is independent of the
    frequency spacing ``dt``. Aliasing period in ``z`` is ``2 pi / dt``.
    """
    if dt is None:
        dt = t_max / DEFAULT_POINTS
    n_fft = int(2 ** np.ceil(np.log2(max(2 * np.pi / (dt * dz), n_out))))
    dt = 2 * np.pi / (n_fft * dz)
    k_max = int(np.floor(t_max / dt))
    if k_max >= n_fft // 2:
        raise ValueError("output spacing too coarse for the frequency band")
    k = np.arange(-k_max, k_max + 1)
    tk = k * dt
    g = np.zeros(n_fft, dtype=complex)
    vals = np.empty(k.size, dtype=complex)
    pos = spectrum(np.abs(tk))
    vals[:] = np.where(k >= 0, pos, np.conj(pos))
    # trapezoid endpoint weights; G(±t_max) is zero for the kernels used here
    g[k % n_fft] = vals
    z0 = -(n_out // 2) * dz
    g *= np.exp(-1j * np.fft.fftfreq(n_fft, d=1.0 / n_fft) * dt * z0)
    full = np.fft.fft(g) * dt / (2 * np.pi)
    z = z0 + dz * np.arange(n_out)
    return z, full[:n_out].real
