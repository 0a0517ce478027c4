"""Density deconvolution under supersmooth measurement error.

Frequentist deconvoluting kernel estimates, a Dirichlet process mixture
sampler, concentration diagnostics and a convergence-rate harness.
"""

__version__ = "0.1.0"

from .error_models import ErrorModel, check_supersmooth_envelope  # noqa: E402
from .kernels import DeconvKernel, eval_Kn, kernel_moment, make_flat_top_kernel  # noqa: E402
from .dke import BandwidthSchedule, GridSpec, bandwidth, dke_eval_direct, dke_fit  # noqa: E402

__all__ = ["ErrorModel", "check_supersmooth_envelope", "DeconvKernel", "eval_Kn",
           "kernel_moment", "make_flat_top_kernel", "BandwidthSchedule", "GridSpec",
           "bandwidth", "dke_eval_direct", "dke_fit", "__version__"]
