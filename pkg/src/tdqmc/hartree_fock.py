"""Self-consistent Hartree-Fock ground state by imaginary-time relaxation.

Orbitals start from the oscillator eigenfunctions of the configured level
structure and relax under the confinement plus Hartree potential, with the
exchange term folded in as an orbital-valued action (never as a local
potential, which would be singular at excited-orbital nodes). Equal-spin
blocks are re-orthonormalized every step, which keeps the level ordering
fixed. Convergence is declared on the energy drift.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .model import SystemConfig, harmonic_confinement, harmonic_eigenstate, soft_coulomb
from .numerics import Grid1D, Orbital, crank_nicolson_step, laplacian_values

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HFEnergyReport:
    """Energy breakdown; total = kinetic + external + hartree + exchange."""

    kinetic: float
    external: float
    hartree: float
    exchange: float

    @property
    def total(self) -> float:
        return self.kinetic + self.external + self.hartree + self.exchange


@dataclass
class HFState:
    """Converged orbitals (orthonormal within equal-spin blocks) + energies."""

    config: SystemConfig
    orbitals: list[Orbital]
    energy_report: HFEnergyReport
    n_steps: int
    energy_trace: list[float]

    @property
    def energy(self) -> float:
        return self.energy_report.total


def interaction_matrix(grid: Grid1D, a: float, e_squared: float = 1.0) -> np.ndarray:
    """Soft-core kernel v(x_g, x_g') tabulated on the grid (G x G)."""
    return soft_coulomb(grid.x[:, None], grid.x[None, :], a, e_squared)


def _orbital_matrix(orbitals: list[Orbital]) -> np.ndarray:
    return np.array([o.values for o in orbitals])


def hartree_potential(i: int, orbitals: list[Orbital], config: SystemConfig,
                      kernel: np.ndarray | None = None) -> np.ndarray:
    """Mean electrostatic potential from all partner densities (j != i)."""
    grid = config.grid
    if kernel is None:
        kernel = interaction_matrix(grid, config.softening_a, config.e_squared)
    phi = _orbital_matrix(orbitals)
    dens = np.abs(phi) ** 2
    other = dens.sum(axis=0) - dens[i]
    return kernel @ (other * grid.weights)


def exchange_action(i: int, orbitals: list[Orbital], config: SystemConfig,
                    kernel: np.ndarray | None = None) -> np.ndarray:
    """Action of the exchange term on orbital i (equal spins only).

    Returns -sum_{j!=i, s_j=s_i} [integral v(x,x') phi_i(x') phi_j*(x') dx']
    phi_j(x), i.e. the exchange potential already applied to phi_i.
    """
    grid = config.grid
    if kernel is None:
        kernel = interaction_matrix(grid, config.softening_a, config.e_squared)
    out = np.zeros(grid.n_points, dtype=complex)
    phi_i = orbitals[i].values
    for j, orb in enumerate(orbitals):
        if j == i or config.spins[j] != config.spins[i]:
            continue
        phi_j = orb.values
        mixed = kernel @ (phi_i * np.conj(phi_j) * grid.weights)
        out -= mixed * phi_j
    return out


def hf_energy(orbitals: list[Orbital], config: SystemConfig,
              kernel: np.ndarray | None = None) -> HFEnergyReport:
    """Kinetic/external by quadrature, Hartree and exchange double integrals."""
    grid = config.grid
    if kernel is None:
        kernel = interaction_matrix(grid, config.softening_a, config.e_squared)
    w = grid.weights
    phi = _orbital_matrix(orbitals)
    dens = np.abs(phi) ** 2

    lap = laplacian_values(phi, grid.dx)
    kinetic = float(np.real(np.sum(w * np.conj(phi) * (-0.5) * lap)))
    v_en = harmonic_confinement(grid.x, config.omega)
    external = float(np.sum(w * v_en * dens))

    hartree = 0.0
    exchange = 0.0
    n = config.n_electrons
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            hartree += 0.5 * float(np.real((w * dens[i]) @ kernel @ (w * dens[j])))
            if config.spins[i] == config.spins[j]:
                cross = phi[i] * np.conj(phi[j])
                exchange -= 0.5 * float(np.real((w * np.conj(cross)) @ kernel @ (w * cross)))
    return HFEnergyReport(kinetic, external, hartree, exchange)


def _orthonormalize_blocks(phi: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Gram-Schmidt within each equal-spin block, level order preserved."""
    w = config.grid.weights
    out = phi.copy()
    for spin in (set(config.spins)):
        block = config.spin_block(spin)
        done: list[int] = []
        for i in block:
            v = out[i]
            for _ in range(2):
                for j in done:
                    v = v - np.sum(v * np.conj(out[j]) * w) * out[j]
            v /= np.sqrt(abs(np.sum(np.abs(v) ** 2 * w)))
            out[i] = v
            done.append(i)
    return out


def initial_orbitals(config: SystemConfig) -> list[Orbital]:
    """Lowest oscillator eigenfunctions per the configured level structure."""
    return [harmonic_eigenstate(config.grid, lvl, config.omega) for lvl in config.levels]


def hf_solve(config: SystemConfig, max_steps: int | None = None,
             tol: float | None = None) -> HFState:
    """Relax the coupled orbital equations to the self-consistent minimum.

    Raises ConvergenceError (carrying the energy trace) if the relative
    energy drift per step has not fallen below `tol` within `max_steps`.
    """
    grid = config.grid
    max_steps = config.hf_max_steps if max_steps is None else max_steps
    tol = config.hf_tol if tol is None else tol
    kernel = interaction_matrix(grid, config.softening_a, config.e_squared)
    v_en = harmonic_confinement(grid.x, config.omega)
    dtau = config.dtau

    orbitals = initial_orbitals(config)
    energy = hf_energy(orbitals, config, kernel).total
    trace = [energy]

    for step in range(1, max_steps + 1):
        phi = _orbital_matrix(orbitals)
        new = np.empty_like(phi)
        for i in range(config.n_electrons):
            v_local = v_en + hartree_potential(i, orbitals, config, kernel)
            stepped = crank_nicolson_step(phi[i], v_local, dtau, grid.dx)
            stepped -= dtau * exchange_action(i, orbitals, config, kernel)
            new[i] = stepped
        new = _orthonormalize_blocks(new, config)
        orbitals = [Orbital(grid, row) for row in new]

        prev, energy = energy, hf_energy(orbitals, config, kernel).total
        trace.append(energy)
        if abs(energy - prev) <= tol * max(1.0, abs(energy)):
            report = hf_energy(orbitals, config, kernel)
            log.info("HF converged in %d steps: E = %.8f", step, report.total)
            return HFState(config, orbitals, report, step, trace)

    raise ConvergenceError(
        f"HF did not reach drift {tol:g} within {max_steps} steps", trace=trace)
