"""Uniform 1D grid, quadrature, and imaginary-time propagation primitives.

Everything downstream (Hartree-Fock, the walker engine, the exact solver)
builds on the operations here: a symmetric hard-box grid, trapezoidal
quadrature, 3-point stencils with zero-Dirichlet ghosts, a Crank-Nicolson
imaginary-time step, Gram-Schmidt orthonormalization, and inverse-CDF
sampling from grid densities. Atomic units (hbar = m = e = 1) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, DegeneracyError, GridMismatchError

try:
    from numba import njit as _njit

    @_njit(cache=True)
    def _thomas_rows_diag2(d, rhs, lower, upper):  # pragma: no cover - compiled
        m, n = rhs.shape
        cp = np.empty(n - 1, dtype=rhs.dtype)
        for k in range(m):
            cp[0] = upper / d[k, 0]
            rhs[k, 0] = rhs[k, 0] / d[k, 0]
            for i in range(1, n):
                denom = d[k, i] - lower * cp[i - 1]
                if i < n - 1:
                    cp[i] = upper / denom
                rhs[k, i] = (rhs[k, i] - lower * rhs[k, i - 1]) / denom
            for i in range(n - 2, -1, -1):
                rhs[k, i] -= cp[i] * rhs[k, i + 1]
        return rhs

    @_njit(cache=True)
    def _thomas_rows_diag1(d, rhs, lower, upper):  # pragma: no cover - compiled
        m, n = rhs.shape
        cp = np.empty(n - 1, dtype=rhs.dtype)
        cp[0] = upper / d[0]
        for i in range(1, n - 1):
            cp[i] = upper / (d[i] - lower * cp[i - 1])
        for k in range(m):
            rhs[k, 0] = rhs[k, 0] / d[0]
            for i in range(1, n):
                denom = d[i] - lower * cp[i - 1]
                rhs[k, i] = (rhs[k, i] - lower * rhs[k, i - 1]) / denom
            for i in range(n - 2, -1, -1):
                rhs[k, i] -= cp[i] * rhs[k, i + 1]
        return rhs

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba always present in CI
    _HAVE_NUMBA = False

HBAR = 1.0
MASS = 1.0
CHARGE = 1.0


@dataclass(frozen=True)
class Constants:
    """Atomic-unit constants; kept as an explicit record for readability."""

    hbar: float = HBAR
    m: float = MASS
    e: float = CHARGE


ATOMIC_UNITS = Constants()


@dataclass(frozen=True)
class Grid1D:
    """Uniform spatial grid on [x_min, x_max], symmetric about zero.

    dx = (x_max - x_min) / (n_points - 1). Symmetry is required so that
    parity-symmetric potentials produce parity-symmetric orbitals.
    """

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 8:
            raise ConfigError("grid.n_points: at least 8 points required")
        if not self.x_max > self.x_min:
            raise ConfigError("grid.x_max must exceed grid.x_min")
        if abs(self.x_min + self.x_max) > 1e-12 * max(1.0, abs(self.x_max)):
            raise ConfigError("grid must be symmetric about 0 (x_min = -x_max)")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights."""
        w = np.full(self.n_points, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def integrate(self, values: np.ndarray) -> complex | float:
        return np.sum(values * self.weights, axis=-1)


@dataclass
class Orbital:
    """Complex one-body wave function sampled on a Grid1D."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n_points,):
            raise GridMismatchError("orbital values do not match grid size")

    def copy(self) -> "Orbital":
        return Orbital(self.grid, self.values.copy())

    def norm(self) -> float:
        return math.sqrt(abs(self.grid.integrate(np.abs(self.values) ** 2)))

    def normalized(self) -> "Orbital":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero orbital")
        return Orbital(self.grid, self.values / n)


def _require_same_grid(a: Orbital, b: Orbital) -> None:
    if a.grid != b.grid:
        raise GridMismatchError("orbitals live on different grids")


def laplacian_values(values: np.ndarray, dx: float) -> np.ndarray:
    """3-point second derivative with zero-Dirichlet ghost points.

    Works on the last axis of arbitrarily batched arrays.
    """
    out = np.empty_like(values)
    out[..., 1:-1] = values[..., 2:] - 2.0 * values[..., 1:-1] + values[..., :-2]
    out[..., 0] = values[..., 1] - 2.0 * values[..., 0]
    out[..., -1] = values[..., -2] - 2.0 * values[..., -1]
    out /= dx * dx
    return out


def laplacian(phi: Orbital) -> Orbital:
    """Second derivative of an orbital via central finite differences."""
    return Orbital(phi.grid, laplacian_values(phi.values, phi.grid.dx))


def inner_product(phi: Orbital, chi: Orbital) -> complex:
    """Trapezoidal quadrature of phi * conj(chi)."""
    _require_same_grid(phi, chi)
    return complex(phi.grid.integrate(phi.values * np.conj(chi.values)))


def gram_schmidt(orbitals: list[Orbital], overlap_cond_limit: float = 1e12) -> list[Orbital]:
    """Orthonormalize an ordered orbital list (first orbital only rescaled).

    Uses two modified Gram-Schmidt passes so the output overlap matrix is
    the identity to ~1e-14. Near-singular input (overlap condition estimate
    above `overlap_cond_limit`) raises DegeneracyError.
    """
    if not orbitals:
        return []
    grid = orbitals[0].grid
    n = len(orbitals)
    overlap = np.empty((n, n), dtype=complex)
    for i, a in enumerate(orbitals):
        for j, b in enumerate(orbitals):
            overlap[i, j] = inner_product(a, b)
    if n > 1 and np.linalg.cond(overlap) > overlap_cond_limit:
        raise DegeneracyError("orbital overlap matrix is numerically singular")

    out: list[np.ndarray] = []
    for i, orb in enumerate(orbitals):
        _require_same_grid(orbitals[0], orb)
        v = orb.values.astype(complex, copy=True)
        for _ in range(2):
            for u in out:
                v -= grid.integrate(v * np.conj(u)) * u
        nrm = math.sqrt(abs(grid.integrate(np.abs(v) ** 2)))
        if nrm < 1e-14:
            raise DegeneracyError(f"orbital {i} vanished during orthonormalization")
        out.append(v / nrm)
    return [Orbital(grid, v) for v in out]


def solve_tridiagonal(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray,
                      rhs: np.ndarray) -> np.ndarray:
    """Thomas solve of a tridiagonal system, vectorized over leading axes.

    `diag` and `rhs` have shape (..., n); `lower`/`upper` have shape
    (..., n-1) or are scalars. Requires diagonal dominance (true for all
    Crank-Nicolson systems built here), so no pivoting. Internally works in
    (n, batch) layout so the sweep touches contiguous rows.
    """
    rhs = np.asarray(rhs)
    n = rhs.shape[-1]
    out_dtype = np.result_type(rhs, diag, np.asarray(lower), np.asarray(upper))
    scalar_bands = np.ndim(lower) == 0 and np.ndim(upper) == 0
    diag = np.asarray(diag)

    # fast path: row-wise compiled sweep in the native (batch, n) layout
    if (_HAVE_NUMBA and scalar_bands and out_dtype in (np.float64, np.complex128)
            and np.issubdtype(diag.dtype, np.floating)
            and (diag.shape == rhs.shape or diag.shape == (n,))):
        work = rhs.reshape(-1, n).astype(out_dtype, order="C", copy=True)
        lo, up = float(lower), float(upper)
        if diag.shape == (n,):
            solved = _thomas_rows_diag1(np.ascontiguousarray(diag, dtype=np.float64),
                                        work, lo, up)
        else:
            d2 = np.ascontiguousarray(diag.reshape(-1, n), dtype=np.float64)
            solved = _thomas_rows_diag2(d2, work, lo, up)
        return solved.reshape(rhs.shape)

    # generic fallback in (n, batch) layout (the sweep solves in place)
    dp = np.moveaxis(rhs, -1, 0).astype(out_dtype, order="C", copy=True)
    d = np.moveaxis(np.broadcast_to(diag, rhs.shape), -1, 0)
    if np.ndim(diag) == rhs.ndim:
        d = np.ascontiguousarray(d)

    if not scalar_bands:
        lo = np.moveaxis(np.broadcast_to(lower, rhs.shape[:-1] + (n - 1,)), -1, 0)
        up = np.moveaxis(np.broadcast_to(upper, rhs.shape[:-1] + (n - 1,)), -1, 0)

    cp = np.empty((n - 1,) + rhs.shape[:-1], dtype=out_dtype)
    cp[0] = (upper if scalar_bands else up[0]) / d[0]
    dp[0] = dp[0] / d[0]
    for i in range(1, n):
        lo_i = lower if scalar_bands else lo[i - 1]
        denom = d[i] - lo_i * cp[i - 1]
        if i < n - 1:
            cp[i] = (upper if scalar_bands else up[i]) / denom
        dp[i] = (dp[i] - lo_i * dp[i - 1]) / denom
    for i in range(n - 2, -1, -1):
        dp[i] -= cp[i] * dp[i + 1]
    return np.ascontiguousarray(np.moveaxis(dp, 0, -1))


def crank_nicolson_step(values: np.ndarray, v_total: np.ndarray, dtau: float,
                        dx: float) -> np.ndarray:
    """One implicit imaginary-time step exp(-dtau*H) to second order.

    H = -(1/2) d^2/dx^2 + v_total on the last axis, zero-Dirichlet box.
    Batched over leading axes; `v_total` broadcasts against `values`.
    Output is intentionally not renormalized.
    """
    if dtau == 0.0:
        return values.copy()
    v_total = np.asarray(v_total)
    if not np.all(np.isfinite(v_total)):
        raise ValueError("potential contains non-finite values")
    inv_dx2 = 1.0 / (dx * dx)
    h_diag = inv_dx2 + v_total
    off = -0.5 * inv_dx2

    # rhs = (I - dtau/2 H) values
    rhs = values * (1.0 - 0.5 * dtau * h_diag)
    half = -0.5 * dtau * off
    rhs[..., 1:] += half * values[..., :-1]
    rhs[..., :-1] += half * values[..., 1:]

    diag = 1.0 + 0.5 * dtau * h_diag
    band = 0.5 * dtau * off
    if diag.shape != values.shape and diag.shape != values.shape[-1:]:
        diag = np.broadcast_to(diag, values.shape)
    return solve_tridiagonal(band, diag, band, rhs)


def imag_time_step(phi: Orbital, v_total: np.ndarray, dtau: float) -> Orbital:
    """Apply exp(-dtau*H) with H = -(1/2)laplacian + v_total (not renormalized)."""
    if dtau < 0:
        raise ValueError("dtau must be non-negative")
    return Orbital(phi.grid, crank_nicolson_step(phi.values, v_total, dtau, phi.grid.dx))


def density_cdf(grid: Grid1D, density: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid of a non-negative grid density (not normalized)."""
    density = np.asarray(density, dtype=float)
    if density.min() < -1e-12 * max(density.max(), 1.0):
        raise ValueError("density has negative values")
    density = np.clip(density, 0.0, None)
    cdf = np.zeros(grid.n_points)
    np.cumsum(0.5 * grid.dx * (density[1:] + density[:-1]), out=cdf[1:])
    return cdf


def sample_from_cdf(grid: Grid1D, cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Invert a piecewise-linear CDF at uniforms u in [0, 1)."""
    total = cdf[-1]
    if total <= 0.0:
        raise ValueError("density integrates to zero")
    target = u * total
    idx = np.clip(np.searchsorted(cdf, target, side="right") - 1, 0, grid.n_points - 2)
    seg = cdf[idx + 1] - cdf[idx]
    frac = np.where(seg > 0.0, (target - cdf[idx]) / np.where(seg > 0.0, seg, 1.0), 0.0)
    return grid.x[idx] + frac * grid.dx


def sample_positions(grid: Grid1D, density: np.ndarray, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw `count` positions from a grid density by inverse-CDF sampling.

    The CDF is the cumulative trapezoid of the density with linear
    interpolation between grid points.
    """
    cdf = density_cdf(grid, density)
    return sample_from_cdf(grid, cdf, rng.uniform(size=count))


def ensemble_std(positions: np.ndarray) -> float:
    """Population standard deviation of an ensemble of positions."""
    positions = np.asarray(positions, dtype=float)
    if positions.size < 2:
        raise ValueError("at least 2 positions required")
    return float(np.std(positions))


def interp_batched(grid: Grid1D, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Linear interpolation of batched grid functions at batched points.

    `values` has shape (..., G) broadcastable against x's shape (...,);
    each row is interpolated at its own point.
    """
    t = (np.asarray(x) - grid.x_min) / grid.dx
    idx = np.clip(t.astype(int), 0, grid.n_points - 2)
    frac = np.clip(t - idx, 0.0, 1.0)
    values = np.broadcast_to(values, np.shape(x) + (grid.n_points,))
    left = np.take_along_axis(values, idx[..., None], axis=-1)[..., 0]
    right = np.take_along_axis(values, (idx + 1)[..., None], axis=-1)[..., 0]
    return left * (1.0 - frac) + right * frac


def spawn_generators(seed, count: int) -> list[np.random.Generator]:
    """One independent PCG64 generator per walker from a single master seed."""
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(child)) for child in seq.spawn(count)]
