"""Reduced density matrices and linear-entropy measures.

Two routes: per-electron matrices built from the raw wave family
(distinguishable particles) and same-spin matrices built from the
per-walker Slater determinants (identical fermions, where a rank-1
determinant must give exactly zero entropy). Matrix powers carry the
trapezoid quadrature weights so traces converge to their continuum
values as the grid refines.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import Grid1D

ORTHO_FALLBACK_TOL = 1e-6


@dataclass
class DensityMatrix:
    """One-body reduced density matrix on a grid, quadrature trace = 1."""

    grid: Grid1D
    rho: np.ndarray

    @classmethod
    def from_raw(cls, grid: Grid1D, rho: np.ndarray) -> "DensityMatrix":
        rho = 0.5 * (rho + rho.conj().T)  # scrub asymmetric rounding noise
        tr = float(np.real(np.sum(grid.weights * np.diag(rho))))
        if tr <= 0:
            raise ValueError("density matrix has non-positive trace")
        return cls(grid, rho / tr)

    def trace(self) -> float:
        return float(np.real(np.sum(self.grid.weights * np.diag(self.rho))))

    def purity(self) -> float:
        """Tr(rho^2) with quadrature-weighted matrix square."""
        weighted = self.rho * self.grid.weights[None, :]
        return float(np.real(np.einsum("ij,ji->", weighted, weighted)))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the weighted kernel (PSD check)."""
        sw = np.sqrt(self.grid.weights)
        sym = sw[:, None] * self.rho * sw[None, :]
        return float(np.linalg.eigvalsh(sym)[0])

    def diagonal_density(self) -> np.ndarray:
        return np.real(np.diag(self.rho)).copy()


def _wave_matrix(guides, i: int) -> np.ndarray:
    """Replica family of electron i as an (M, G) array."""
    waves = guides.as_matrix(i) if hasattr(guides, "as_matrix") else np.asarray(guides[i])
    if waves.ndim == 1:
        waves = waves[None, :]
    return waves


def rdm_distinguishable(i: int, guides) -> DensityMatrix:
    """Average projector over electron i's wave family (Hermitian, PSD)."""
    waves = _wave_matrix(guides, i)
    grid = guides.grid
    rho = waves.T @ np.conj(waves) / waves.shape[0]
    return DensityMatrix.from_raw(grid, rho)


def linear_entropy(dm: DensityMatrix) -> float:
    """1 - Tr(rho^2): zero for pure states, 1 - 1/d for d-fold mixtures."""
    return 1.0 - dm.purity()


@dataclass(frozen=True)
class IdenticalEntropy:
    """Antisymmetrization-corrected entropy; raw value kept for diagnostics
    because near rank-1 states the subtraction can go slightly negative."""

    value: float
    raw: float


def linear_entropy_identical(dm: DensityMatrix, n_same_spin: int) -> IdenticalEntropy:
    """1 - N Tr(rho^2), clamped at zero (MC noise can undershoot)."""
    raw = 1.0 - n_same_spin * dm.purity()
    return IdenticalEntropy(max(raw, 0.0), raw)


def _slater_rdm_general(waves: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """One-body RDM of a determinant with non-orthonormal orbitals.

    rho(x, x') = sum_ab phi_a(x) [S^-1]_ab phi_b*(x'), S_ab = <phi_b|phi_a>.
    """
    overlap = (waves * weights) @ np.conj(waves.T)  # S[a, b] = <phi_b|phi_a>
    inv = np.linalg.inv(overlap)
    return waves.T @ inv @ np.conj(waves)


def rdm_identical(spin: str, guides, spins) -> DensityMatrix:
    """Spin-resolved RDM averaged over the per-walker Slater determinants.

    For orthonormal per-walker orbitals this is the mean same-spin
    projector; orthonormality violations beyond 1e-6 fall back to the
    overlap-matrix formula with a warning.
    """
    block = [i for i, s in enumerate(spins) if s == spin]
    if not block:
        raise ValueError(f"no electrons with spin {spin!r}")
    grid = guides.grid
    w = grid.weights
    stacks = [_wave_matrix(guides, i) for i in block]
    m = max(s.shape[0] for s in stacks)
    stacks = [np.broadcast_to(s, (m, s.shape[-1])) for s in stacks]

    rho = np.zeros((grid.n_points, grid.n_points), dtype=complex)
    fell_back = 0
    for k in range(m):
        waves = np.stack([s[k] for s in stacks])
        overlap = (waves * w) @ np.conj(waves.T)
        if np.max(np.abs(overlap - np.eye(len(block)))) > ORTHO_FALLBACK_TOL:
            fell_back += 1
            rho += _slater_rdm_general(waves, w) / len(block)
        else:
            rho += waves.T @ np.conj(waves) / len(block)
    if fell_back:
        warnings.warn(
            f"{fell_back}/{m} determinants violated orthonormality beyond "
            f"{ORTHO_FALLBACK_TOL:g}; used the overlap-matrix formula",
            stacklevel=2)
    return DensityMatrix.from_raw(grid, rho / m)


def rdm_to_csv(dm: DensityMatrix, path, metadata: dict | None = None) -> None:
    """Write (x, x', Re rho, Im rho) rows for external plotting."""
    with open(path, "w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh)
        writer.writerow(["x", "x_prime", "re_rho", "im_rho"])
        x = dm.grid.x
        for i in range(dm.grid.n_points):
            for j in range(dm.grid.n_points):
                writer.writerow([f"{x[i]:.10g}", f"{x[j]:.10g}",
                                 f"{dm.rho[i, j].real:.12g}", f"{dm.rho[i, j].imag:.12g}"])
