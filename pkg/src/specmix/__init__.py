"""Multi-output Gaussian-process kernels from spectral mixtures.

Block (finite-bandwidth) spectral components can tile frequency space
without overlap, which lets the cross-spectra of a multi-output model
reach the full Cauchy-Schwarz range; Gaussian components cannot.  This
package implements both families, exact GP inference on top of them, and
spectral / marginal-likelihood fitting routines, plus a CLI for the
bundled diagnostics.
"""

__version__ = "0.1.0"

from . import data, fit, gp, kernels, spectral  # noqa: F401
from .errors import (  # noqa: F401
    AllRestartsFailedError,
    ConfigError,
    DegenerateVarianceError,
    NonConvergenceError,
    NotPSDError,
    QuadratureError,
    SpecmixError,
    UndefinedCoherenceError,
)
