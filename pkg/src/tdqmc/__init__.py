"""Time-dependent quantum Monte Carlo for 1D quantum dots.

Correlated ground states from coupled walker / guide-wave imaginary-time
propagation, Hartree-Fock references, spatial-entanglement measures from
reduced density matrices, and an independent exact few-body solver.
"""

__version__ = "0.1.0"

from .numerics import Grid1D, Orbital
from .model import NonlocalityParams, SystemConfig, compensated_config, polarized_config

__all__ = [
    "Grid1D",
    "Orbital",
    "SystemConfig",
    "NonlocalityParams",
    "polarized_config",
    "compensated_config",
    "__version__",
]
