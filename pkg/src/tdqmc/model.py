"""Physical model: harmonic dot, soft-core repulsion, spins, nonlocality.

The dot confines electrons with v(x) = omega^2 x^2 / 2 and electrons repel
through the soft-core Coulomb kernel e^2 / sqrt(r^2 + a^2). Quantum
nonlocality is parameterized per ordered electron pair (j, i) by
sigma_{j,i} = alpha_{j,i} * s_j where s_j is the walker-ensemble spread of
the source electron j; alpha = inf selects the mean-field limit and
alpha = 0 the purely local pairing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.hermite import hermval

from .errors import ConfigError
from .numerics import Grid1D, Orbital

SPIN_UP = "up"
SPIN_DOWN = "down"

DEFAULT_GRID = Grid1D(-8.0, 8.0, 256)


def harmonic_confinement(x, omega: float):
    """Parabolic core potential omega^2 x^2 / 2."""
    return 0.5 * omega**2 * np.asarray(x) ** 2


def soft_coulomb(xi, xj, a: float, e_squared: float = 1.0):
    """Soft-core repulsion e^2 / sqrt(r^2 + a^2), r = |xi - xj|."""
    if a <= 0:
        raise ConfigError("softening_a must be positive")
    r = np.asarray(xi) - np.asarray(xj)
    return e_squared / np.sqrt(r * r + a * a)


def nonlocal_length(alpha: float, spread: float) -> float:
    """sigma = alpha * s for a source-ensemble spread s; inf propagates."""
    if spread < 0:
        raise ValueError("ensemble spread must be non-negative")
    if math.isinf(alpha):
        return math.inf
    return alpha * spread


def harmonic_eigenstate(grid: Grid1D, n: int, omega: float) -> Orbital:
    """n-th harmonic-oscillator eigenfunction, renormalized on the grid."""
    if n < 0:
        raise ValueError("level index must be non-negative")
    xi = math.sqrt(omega) * grid.x
    coeffs = np.zeros(n + 1)
    coeffs[n] = 1.0
    norm = (omega / math.pi) ** 0.25 / math.sqrt(2.0**n * math.factorial(n))
    values = norm * hermval(xi, coeffs) * np.exp(-0.5 * xi * xi)
    return Orbital(grid, values).normalized()


def spin_polarized_spins(n_electrons: int) -> tuple[str, ...]:
    """One same-spin electron per level."""
    return (SPIN_UP,) * n_electrons


def spin_compensated_spins(n_electrons: int) -> tuple[str, ...]:
    """Two opposite-spin electrons per level; requires even N."""
    if n_electrons % 2 != 0:
        raise ConfigError("spins: spin-compensated preset needs an even electron count")
    return (SPIN_UP, SPIN_DOWN) * (n_electrons // 2)


@dataclass(frozen=True)
class SystemConfig:
    """Full system + propagation configuration.

    `spins` fixes the level structure: within each spin block, electrons
    occupy successive oscillator levels in listing order.
    """

    n_electrons: int
    spins: tuple[str, ...]
    omega: float = 1.0
    softening_a: float = 1.0
    e_squared: float = 1.0
    n_walkers: int = 5000
    grid: Grid1D = DEFAULT_GRID
    dtau: float = 0.01
    n_steps: int = 200
    sigma_update: str = "per_step"
    hf_max_steps: int = 20000
    hf_tol: float = 1e-9
    trace_every: int = 10
    rng_chunk: int = 50
    kernel_bin_refine: int = 2
    drift_cap: float = 4.0
    nodal_floor: float = 1e-6

    def __post_init__(self):
        if self.n_electrons < 1:
            raise ConfigError("n_electrons must be at least 1")
        if len(self.spins) != self.n_electrons:
            raise ConfigError("spins: expected one label per electron "
                              f"(got {len(self.spins)} for N={self.n_electrons})")
        bad = [s for s in self.spins if s not in (SPIN_UP, SPIN_DOWN)]
        if bad:
            raise ConfigError(f"spins: unknown label {bad[0]!r}")
        if self.n_walkers < 100:
            raise ConfigError("n_walkers must be at least 100")
        if self.omega <= 0:
            raise ConfigError("omega must be positive")
        if self.softening_a <= 0:
            raise ConfigError("softening_a must be positive")
        if self.e_squared < 0:
            raise ConfigError("e_squared must be non-negative")
        if self.dtau <= 0:
            raise ConfigError("dtau must be positive")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be at least 1")
        if self.sigma_update not in ("per_step", "frozen"):
            raise ConfigError("sigma_update must be 'per_step' or 'frozen'")

    @property
    def levels(self) -> tuple[int, ...]:
        """Oscillator level of each electron (sequential within spin block)."""
        counters: dict[str, int] = {}
        out = []
        for s in self.spins:
            out.append(counters.get(s, 0))
            counters[s] = out[-1] + 1
        return tuple(out)

    def spin_block(self, spin: str) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.spins) if s == spin)

    def with_updates(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)


def polarized_config(n_electrons: int, **kwargs) -> SystemConfig:
    return SystemConfig(n_electrons, spin_polarized_spins(n_electrons), **kwargs)


def compensated_config(n_electrons: int, **kwargs) -> SystemConfig:
    return SystemConfig(n_electrons, spin_compensated_spins(n_electrons), **kwargs)


@dataclass
class NonlocalityParams:
    """Per-pair nonlocality settings.

    `alpha[j, i]` scales the window on source j's walkers as seen by
    electron i (diagonal unused). inf means mean field for that pair,
    0 means purely local pairing. `sigma_fixed[j, i]`, where finite,
    overrides the alpha * spread product with a fixed window width.
    """

    alpha: np.ndarray
    sigma_fixed: np.ndarray | None = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        n = self.alpha.shape[0]
        if self.alpha.shape != (n, n):
            raise ConfigError("alpha matrix must be square")
        off_diag = self.alpha[~np.eye(n, dtype=bool)]
        if np.any(np.isnan(off_diag)) or np.any(off_diag < 0):
            raise ConfigError("alpha entries must be non-negative (inf allowed)")
        if self.sigma_fixed is not None:
            self.sigma_fixed = np.asarray(self.sigma_fixed, dtype=float)
            if self.sigma_fixed.shape != self.alpha.shape:
                raise ConfigError("sigma_fixed must match the alpha matrix shape")

    @property
    def n_electrons(self) -> int:
        return self.alpha.shape[0]

    def sigma_matrix(self, spreads: np.ndarray) -> np.ndarray:
        """sigma[j, i] from the live source spreads (fixed entries win)."""
        sig = self.alpha * np.asarray(spreads, dtype=float)[:, None]
        sig[np.isinf(self.alpha)] = np.inf
        if self.sigma_fixed is not None:
            mask = np.isfinite(self.sigma_fixed)
            sig[mask] = self.sigma_fixed[mask]
        return sig

    @classmethod
    def mean_field(cls, n_electrons: int) -> "NonlocalityParams":
        return cls(np.full((n_electrons, n_electrons), np.inf))

    @classmethod
    def ground_row(cls, n_electrons: int, alpha: float) -> "NonlocalityParams":
        """Finite window on the ground-level source only, rest mean field."""
        a = np.full((n_electrons, n_electrons), np.inf)
        a[0, 1:] = alpha
        return cls(a)

    @classmethod
    def outer_pair_sigma(cls, n_electrons: int, sigma: float) -> "NonlocalityParams":
        """Fixed window between the two outermost electrons, rest mean field."""
        if n_electrons < 2:
            raise ConfigError("outer-pair window needs at least 2 electrons")
        a = np.full((n_electrons, n_electrons), np.inf)
        fixed = np.full((n_electrons, n_electrons), np.nan)
        fixed[n_electrons - 2, n_electrons - 1] = sigma
        fixed[n_electrons - 1, n_electrons - 2] = sigma
        a[n_electrons - 2, n_electrons - 1] = np.nan  # value comes from sigma_fixed
        a[n_electrons - 1, n_electrons - 2] = np.nan
        # keep alpha matrix valid (finite placeholder, unused where fixed)
        a[np.isnan(a)] = 1.0
        return cls(a, fixed)
