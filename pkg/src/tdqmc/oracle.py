"""Independent brute-force few-body solver on a tensor-product grid.

The full N-body wave function is relaxed in imaginary time (Strang split:
half potential, per-axis implicit kinetic steps, half potential) with the
requested permutation symmetry re-projected every step. Energies come from
the Rayleigh quotient with the exact discrete Hamiltonian, so the splitting
bias on the energy is negligible next to grid resolution. This module never
touches the walker engine; it exists to check it.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConfigError, ConvergenceError, SymmetryError
from .model import SystemConfig, harmonic_confinement, soft_coulomb
from .numerics import Grid1D, solve_tridiagonal

log = logging.getLogger(__name__)

ANTISYMMETRIC = "antisymmetric"
SYMMETRIC = "symmetric"
NONE = "none"

MAX_ELECTRONS = 4


@dataclass(frozen=True)
class OracleSpec:
    """Numerical controls for the exact solver (grid may be coarser than
    the one-body grid; amplitudes scale as n_points**N)."""

    n_points: int = 96
    x_max: float = 6.0
    dtau: float = 0.05
    max_steps: int = 40000
    drift_tol: float = 1e-9
    max_amplitudes: int = 2**22

    @property
    def grid(self) -> Grid1D:
        return Grid1D(-self.x_max, self.x_max, self.n_points)


@dataclass
class GridWavefunction:
    """N-body amplitudes on a tensor grid with a declared exchange symmetry.

    `blocks` lists the coordinate groups over which the symmetry applies
    (same-spin electrons for the antisymmetric case).
    """

    grid: Grid1D
    n_electrons: int
    amplitudes: np.ndarray
    symmetry: str = NONE
    blocks: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        expected = (self.grid.n_points,) * self.n_electrons
        if self.amplitudes.shape != expected:
            raise ConfigError("amplitude array does not match grid and N")

    def norm(self) -> float:
        return math.sqrt(abs(_weighted_sum(np.abs(self.amplitudes) ** 2, self.grid)))

    def normalized(self) -> "GridWavefunction":
        n = self.norm()
        if n < 1e-300:
            raise SymmetryError("wave function has zero norm")
        return GridWavefunction(self.grid, self.n_electrons, self.amplitudes / n,
                                self.symmetry, self.blocks)


def _weighted(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Multiply by the tensor-product trapezoid weights, axis by axis."""
    out = values.copy()
    w = grid.weights
    for ax in range(values.ndim):
        shape = [1] * values.ndim
        shape[ax] = len(w)
        out *= w.reshape(shape)
    return out


def _weighted_sum(values: np.ndarray, grid: Grid1D) -> complex:
    return complex(np.sum(_weighted(values, grid)))


def check_capacity(n_electrons: int, spec: OracleSpec) -> None:
    if n_electrons > MAX_ELECTRONS:
        raise CapacityError(
            f"exact solves support at most {MAX_ELECTRONS} electrons "
            f"(requested {n_electrons}); larger systems are covered by "
            "property-based checks only")
    if spec.n_points**n_electrons > spec.max_amplitudes:
        raise CapacityError(
            f"{spec.n_points}^{n_electrons} amplitudes exceed the budget "
            f"of {spec.max_amplitudes}; reduce oracle.n_points")


def total_potential(n_electrons: int, grid: Grid1D, config: SystemConfig) -> np.ndarray:
    """Confinement plus pair repulsion on the tensor grid."""
    x = grid.x
    shape = [1] * n_electrons
    out = np.zeros((grid.n_points,) * n_electrons)
    for i in range(n_electrons):
        s = shape.copy()
        s[i] = grid.n_points
        out = out + harmonic_confinement(x, config.omega).reshape(s)
    for i in range(n_electrons):
        for j in range(i + 1, n_electrons):
            si = shape.copy()
            si[i] = grid.n_points
            sj = shape.copy()
            sj[j] = grid.n_points
            out = out + soft_coulomb(x.reshape(si), x.reshape(sj),
                                     config.softening_a, config.e_squared)
    return out


def apply_hamiltonian(psi: GridWavefunction, config: SystemConfig,
                      potential: np.ndarray | None = None) -> GridWavefunction:
    """Matrix-free H psi: dimension-wise kinetic stencils + diagonal potential."""
    check_capacity(psi.n_electrons, OracleSpec(n_points=psi.grid.n_points))
    a = psi.amplitudes
    dx2 = psi.grid.dx**2
    out = np.zeros_like(a)
    for ax in range(psi.n_electrons):
        moved = np.moveaxis(a, ax, -1)
        tgt = np.moveaxis(out, ax, -1)
        tgt[..., :] += -0.5 / dx2 * (
            np.concatenate([moved[..., 1:], np.zeros_like(moved[..., :1])], axis=-1)
            - 2.0 * moved
            + np.concatenate([np.zeros_like(moved[..., :1]), moved[..., :-1]], axis=-1))
    if potential is None:
        potential = total_potential(psi.n_electrons, psi.grid, config)
    out += potential * a
    return GridWavefunction(psi.grid, psi.n_electrons, out, psi.symmetry, psi.blocks)


def _block_permutations(blocks: tuple[tuple[int, ...], ...], n: int):
    """All coordinate permutations acting within the given blocks, with signs."""
    per_block = []
    for block in blocks:
        per_block.append(list(itertools.permutations(block)))
    for combo in itertools.product(*per_block):
        perm = list(range(n))
        sign = 1
        for block, target in zip(blocks, combo):
            for src, dst in zip(block, target):
                perm[src] = dst
            sign *= _permutation_sign(block, target)
        yield tuple(perm), sign


def _permutation_sign(src: tuple[int, ...], dst: tuple[int, ...]) -> int:
    order = [src.index(d) for d in dst]
    sign = 1
    seen = [False] * len(order)
    for i in range(len(order)):
        if seen[i]:
            continue
        j, cycle = i, 0
        while not seen[j]:
            seen[j] = True
            j = order[j]
            cycle += 1
        if cycle % 2 == 0:
            sign = -sign
    return sign


def project_symmetry(psi: GridWavefunction, symmetry: str | None = None,
                     blocks: tuple[tuple[int, ...], ...] | None = None) -> GridWavefunction:
    """Symmetrize or antisymmetrize over coordinate blocks and renormalize."""
    symmetry = psi.symmetry if symmetry is None else symmetry
    blocks = psi.blocks if blocks is None else blocks
    if symmetry == NONE:
        return psi.normalized()
    if not blocks:
        blocks = (tuple(range(psi.n_electrons)),)
    acc = np.zeros_like(psi.amplitudes)
    count = 0
    for perm, sign in _block_permutations(blocks, psi.n_electrons):
        term = np.transpose(psi.amplitudes, perm)
        acc += sign * term if symmetry == ANTISYMMETRIC else term
        count += 1
    acc /= count
    projected = GridWavefunction(psi.grid, psi.n_electrons, acc, symmetry, blocks)
    if projected.norm() < 1e-12:
        raise SymmetryError("projection annihilated the state "
                            "(symmetry incompatible with the configuration)")
    return projected.normalized()


def symmetry_residual(psi: GridWavefunction) -> float:
    """Max amplitude change under one declared-symmetry swap (diagnostic)."""
    if psi.symmetry == NONE:
        return 0.0
    blocks = psi.blocks or (tuple(range(psi.n_electrons)),)
    worst = 0.0
    for block in blocks:
        if len(block) < 2:
            continue
        i, j = block[0], block[1]
        perm = list(range(psi.n_electrons))
        perm[i], perm[j] = perm[j], perm[i]
        swapped = np.transpose(psi.amplitudes, perm)
        target = -swapped if psi.symmetry == ANTISYMMETRIC else swapped
        worst = max(worst, float(np.max(np.abs(psi.amplitudes - target))))
    return worst


def _initial_state(config: SystemConfig, grid: Grid1D, symmetry: str,
                   blocks: tuple[tuple[int, ...], ...]) -> GridWavefunction:
    """Product of oscillator levels matching the block occupation."""
    from .model import harmonic_eigenstate

    n = config.n_electrons
    levels = [0] * n
    if symmetry == ANTISYMMETRIC:
        # distinct levels inside each block, or the projection annihilates
        for block in (blocks or ((tuple(range(n)),))):
            for pos, coord in enumerate(block):
                levels[coord] = pos
    one_body = [harmonic_eigenstate(grid, lvl, config.omega).values for lvl in levels]
    amp = one_body[0]
    for vals in one_body[1:]:
        amp = np.multiply.outer(amp, vals)
    return GridWavefunction(grid, n, amp.astype(complex), symmetry, blocks)


def _kinetic_cn_sweep(amp: np.ndarray, dtau: float, dx: float) -> np.ndarray:
    """Implicit kinetic step along every axis (axes commute, no split error)."""
    inv_dx2 = 1.0 / (dx * dx)
    off = -0.5 * inv_dx2
    diag_h = inv_dx2
    for ax in range(amp.ndim):
        moved = np.moveaxis(amp, ax, -1)
        rhs = moved * (1.0 - 0.5 * dtau * diag_h)
        half = -0.5 * dtau * off
        rhs[..., 1:] += half * moved[..., :-1]
        rhs[..., :-1] += half * moved[..., 1:]
        diag = np.full(moved.shape[-1], 1.0 + 0.5 * dtau * diag_h)
        band = 0.5 * dtau * off
        solved = solve_tridiagonal(band, diag, band, rhs)
        amp = np.moveaxis(solved, -1, ax)
    return amp


def blocks_from_spins(spins: tuple[str, ...]) -> tuple[tuple[int, ...], ...]:
    """Same-spin coordinate groups (only groups with >= 2 members matter)."""
    groups: dict[str, list[int]] = {}
    for idx, s in enumerate(spins):
        groups.setdefault(s, []).append(idx)
    return tuple(tuple(g) for g in groups.values() if len(g) >= 2)


def exact_ground_state(config: SystemConfig, symmetry: str,
                       spec: OracleSpec = OracleSpec()) -> tuple[GridWavefunction, float]:
    """Relax the full N-body state to the ground state of the symmetry sector.

    Projection runs every step; convergence is declared when the
    Rayleigh-quotient drift per step falls below spec.drift_tol.
    """
    if symmetry not in (ANTISYMMETRIC, SYMMETRIC, NONE):
        raise ConfigError(f"unknown symmetry {symmetry!r}")
    check_capacity(config.n_electrons, spec)
    grid = spec.grid
    blocks: tuple[tuple[int, ...], ...] = ()
    if symmetry == ANTISYMMETRIC:
        blocks = blocks_from_spins(config.spins)
    elif symmetry == SYMMETRIC:
        blocks = (tuple(range(config.n_electrons)),)

    potential = total_potential(config.n_electrons, grid, config)
    psi = _initial_state(config, grid, symmetry, blocks)
    psi = project_symmetry(psi)
    half_v = np.exp(-0.5 * spec.dtau * potential)

    energy = _rayleigh(psi, config, potential)
    check_every = 10
    for step in range(1, spec.max_steps + 1):
        amp = psi.amplitudes * half_v
        amp = _kinetic_cn_sweep(amp, spec.dtau, grid.dx)
        amp *= half_v
        psi = GridWavefunction(grid, config.n_electrons, amp, symmetry, blocks)
        psi = project_symmetry(psi)
        if step % check_every == 0:
            prev, energy = energy, _rayleigh(psi, config, potential)
            drift = abs(energy - prev) / check_every
            if drift < spec.drift_tol:
                log.info("oracle converged in %d steps: E = %.9f", step, energy)
                return psi, energy
    raise ConvergenceError(
        f"exact solve did not reach drift {spec.drift_tol:g} within "
        f"{spec.max_steps} steps")


def _rayleigh(psi: GridWavefunction, config: SystemConfig,
              potential: np.ndarray) -> float:
    h_psi = apply_hamiltonian(psi, config, potential)
    num = np.sum(_weighted(np.conj(psi.amplitudes) * h_psi.amplitudes, psi.grid))
    den = np.sum(_weighted(np.abs(psi.amplitudes) ** 2, psi.grid))
    return float(np.real(num / den))


def one_body_rdm(psi: GridWavefunction):
    """rho(x, x') = integral psi(x, rest) psi*(x', rest) d(rest), normalized.

    Returns a DensityMatrix on the oracle grid (coordinate 0 is traced
    against all others; put the spin block of interest first).
    """
    from .entanglement import DensityMatrix

    g = psi.grid.n_points
    mat = psi.amplitudes.reshape(g, -1)
    if psi.n_electrons == 1:
        rest_w = np.ones(1)
    else:
        rest_w = _weighted(np.ones((g,) * (psi.n_electrons - 1)), psi.grid).reshape(-1)
    rho = (mat * rest_w) @ np.conj(mat.T)
    return DensityMatrix.from_raw(psi.grid, rho)


def refined_energy(config: SystemConfig, symmetry: str, base: OracleSpec,
                   refine_factor: float = 2.0) -> dict:
    """Energy at two resolutions plus an h^2 Richardson extrapolation."""
    fine_points = int(round(base.n_points * refine_factor))
    fine = OracleSpec(n_points=fine_points, x_max=base.x_max, dtau=base.dtau,
                      max_steps=base.max_steps, drift_tol=base.drift_tol,
                      max_amplitudes=base.max_amplitudes)
    _, e_coarse = exact_ground_state(config, symmetry, base)
    _, e_fine = exact_ground_state(config, symmetry, fine)
    h_c = base.grid.dx
    h_f = fine.grid.dx
    extrapolated = e_fine + (e_fine - e_coarse) * h_f**2 / (h_c**2 - h_f**2)
    return {
        "coarse": e_coarse,
        "fine": e_fine,
        "change": abs(e_fine - e_coarse),
        "extrapolated": extrapolated,
        "coarse_points": base.n_points,
        "fine_points": fine_points,
    }


def reference_fingerprint(config: SystemConfig, symmetry: str, spec: OracleSpec) -> str:
    payload = {
        "n_electrons": config.n_electrons,
        "spins": list(config.spins),
        "omega": config.omega,
        "softening_a": config.softening_a,
        "e_squared": config.e_squared,
        "symmetry": symmetry,
        "n_points": spec.n_points,
        "x_max": spec.x_max,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


REFERENCE_FORMAT_VERSION = 1


def save_reference(path: Path, config: SystemConfig, symmetry: str, spec: OracleSpec,
                   energy: float, entropies: dict) -> dict:
    """Append a converged oracle result to the versioned reference file."""
    path = Path(path)
    store = {"version": REFERENCE_FORMAT_VERSION, "entries": {}}
    if path.exists():
        store = json.loads(path.read_text())
        if store.get("version") != REFERENCE_FORMAT_VERSION:
            raise ConfigError(f"unsupported reference file version in {path}")
    key = reference_fingerprint(config, symmetry, spec)
    entry = {
        "energy": energy,
        "entropies": entropies,
        "n_electrons": config.n_electrons,
        "spins": list(config.spins),
        "omega": config.omega,
        "softening_a": config.softening_a,
        "e_squared": config.e_squared,
        "symmetry": symmetry,
        "n_points": spec.n_points,
        "x_max": spec.x_max,
    }
    store["entries"][key] = entry
    path.write_text(json.dumps(store, indent=2, sort_keys=True) + "\n")
    return {key: entry}


def load_reference(path: Path, config: SystemConfig, symmetry: str,
                   spec: OracleSpec) -> dict | None:
    path = Path(path)
    if not path.exists():
        return None
    store = json.loads(path.read_text())
    return store.get("entries", {}).get(reference_fingerprint(config, symmetry, spec))
