"""Effective-dimension toolkit.

Covariance spectra and effective dimensions, metric-entropy bounds and
constructive coverings for ellipsoids, Monte-Carlo estimation of uniform
deviation suprema for random tensors and Hessians, Bregman statistical
preconditioning, and non-isotropic randomized smoothing, plus a
configuration-driven CLI harness (``effdim``).
"""

__version__ = "0.1.0"

from .rng import RngStream
from .spectrum import CovarianceSpectrum, make_spectrum, effective_dimension

__all__ = [
    "RngStream",
    "CovarianceSpectrum",
    "make_spectrum",
    "effective_dimension",
    "__version__",
]
