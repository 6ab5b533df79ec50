"""Glauber dynamics for the Ising model with frozen boundary, block test
functions and a reversible birth-death toy chain.

Hot loops live in :mod:`kinising.kernels` (and the birth-death kernels);
set ``KINISING_DISABLE_JIT=1`` to run them without numba.
"""

from ._jit import USE_JIT
from .lattice import (DomainTooLargeError, GibbsSpec, LatticeDomain, NumericalDegeneracyError, SpinConfig,
                      enumerate_gibbs, exact_generator)
from .rates import HEAT_BATH, METROPOLIS, RateModel

__version__ = "0.1.0"

__all__ = [
    "USE_JIT", "LatticeDomain", "SpinConfig", "GibbsSpec", "enumerate_gibbs", "exact_generator",
    "DomainTooLargeError", "NumericalDegeneracyError", "RateModel", "HEAT_BATH", "METROPOLIS",
]
