"""Classical and quantum dissipative kicked-rotator ratchets.

Classical Monte Carlo currents, Ulam approximations of the Perron-Frobenius
operator, the quantum one-period channel, Wigner functions and the
spectral and phase-space comparisons between them.
"""
from .errors import KickRatchetError
from .params import Params, SeedLineage, derive_seed, make_params

__version__ = "0.1.0"

__all__ = ["KickRatchetError", "Params", "SeedLineage", "derive_seed", "make_params", "__version__"]
