"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, numerical failures
(convergence, propagation, degeneracy, nodal) -> 3, CapacityError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field."""


class GridMismatchError(ValueError):
    """Two grid quantities were combined but live on different grids."""


class DegeneracyError(RuntimeError):
    """Orbital set too close to linear dependence to orthonormalize."""


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted before reaching the drift tolerance."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class PropagationError(RuntimeError):
    """Non-finite amplitudes appeared during propagation."""

    def __init__(self, message, electron=None, walker=None, step=None):
        super().__init__(message)
        self.electron = electron
        self.walker = walker
        self.step = step


class NodalRegionError(ValueError):
    """Wave amplitude below the nodal floor where a ratio was requested."""


class SymmetryError(RuntimeError):
    """Symmetry projection annihilated the state."""


class CapacityError(RuntimeError):
    """Requested exact solve exceeds the configured amplitude budget."""
