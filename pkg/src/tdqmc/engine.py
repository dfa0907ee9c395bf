"""Coupled walker / guide-wave relaxation engine.

Each electron carries M walkers and M guide waves. Within one step both
phases read the previous step's state (Jacobi sweep): walkers move by
drift-diffusion against the previous guides, and every guide takes one
implicit imaginary-time step under the confinement, the window-weighted
Monte Carlo pair potential, and the per-walker exchange action, followed
by per-walker Gram-Schmidt inside equal-spin blocks.

The window-weighted pair potential is evaluated by depositing source
walkers on a refined bin grid (cloud-in-cell); the kernel is exact in the
receiving walker, so the result matches the direct per-walker sum up to
O(bin^2) interpolation error. sigma = inf pairs collapse to a single
shared mean-field potential and sigma = 0 pairs couple each walker to its
partner walker only.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as scipy_stats

from .errors import ConfigError, NodalRegionError, PropagationError
from .hartree_fock import HFState, hf_solve, interaction_matrix
from .model import (NonlocalityParams, SystemConfig, harmonic_confinement,
                    soft_coulomb)
from .numerics import (Grid1D, Orbital, crank_nicolson_step, density_cdf,
                       interp_batched, laplacian_values, sample_from_cdf,
                       spawn_generators)

log = logging.getLogger(__name__)

PAIR_MEAN_FIELD = 0
PAIR_LOCAL = 1
PAIR_WINDOWED = 2

CHECKPOINT_VERSION = 1


def gaussian_window(xj, xjk, sigma: float):
    """exp(-|xj - xjk|^2 / (2 sigma^2)); 1 for sigma = inf.

    sigma = 0 is an error: callers must branch to local-interaction
    semantics explicitly rather than evaluate a degenerate kernel.
    """
    if sigma == 0:
        raise ValueError("sigma = 0 has delta semantics; use the local branch")
    if sigma < 0:
        raise ValueError("sigma must be positive")
    d = np.asarray(xj, dtype=float) - np.asarray(xjk, dtype=float)
    if math.isinf(sigma):
        return np.ones_like(d) if d.ndim else 1.0
    out = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return out if d.ndim else float(out)


def window_weight_sum(ensemble: "WalkerEnsemble", j: int, k: int, sigma: float) -> float:
    """Normalization sum_l K(r_j^l, r_j^k, sigma) (>= 1, the l = k term)."""
    r = ensemble.positions[j]
    return float(np.sum(gaussian_window(r, r[k], sigma)))


class WalkerStreams:
    """One independent generator per walker, with chunked noise pre-draws.

    Normals for `chunk` steps are drawn per stream in one call; on-demand
    uniforms (initial sampling, nodal resampling) interleave deterministically.
    Checkpoints must land on chunk boundaries so the stream states capture
    exactly the consumed prefix.
    """

    def __init__(self, seed, n_walkers: int, n_electrons: int, chunk: int):
        self.n_walkers = n_walkers
        self.n_electrons = n_electrons
        self.chunk = chunk
        self.generators = spawn_generators(seed, n_walkers)
        self._noise: np.ndarray | None = None
        self._chunk_start = -1

    def initial_uniforms(self) -> np.ndarray:
        """(N, M) uniforms, one batch per walker, for position sampling."""
        cols = [g.uniform(size=self.n_electrons) for g in self.generators]
        return np.array(cols).T

    def normals_for_step(self, step: int) -> np.ndarray:
        """(N, M) standard normals for one step, served from the chunk."""
        base = (step // self.chunk) * self.chunk
        if base != self._chunk_start:
            draws = [g.standard_normal(size=(self.chunk, self.n_electrons))
                     for g in self.generators]
            self._noise = np.stack(draws, axis=-1)  # (chunk, N, M)
            self._chunk_start = base
        return self._noise[step - base]

    def uniform_for(self, walker: int) -> float:
        return float(self.generators[walker].uniform())

    def state_list(self) -> list[dict]:
        return [g.bit_generator.state for g in self.generators]

    def restore(self, states: list[dict]) -> None:
        for g, st in zip(self.generators, states):
            g.bit_generator.state = st
        self._noise = None
        self._chunk_start = -1


@dataclass
class WalkerEnsemble:
    """Walker positions r_i^k for N electrons x M walkers plus their streams."""

    positions: np.ndarray  # (N, M)
    spins: tuple[str, ...]
    step_index: int
    streams: WalkerStreams

    @property
    def n_walkers(self) -> int:
        return self.positions.shape[1]

    def spreads(self) -> np.ndarray:
        """Per-electron ensemble standard deviation (population)."""
        return np.std(self.positions, axis=1)


@dataclass
class GuideWaveSet:
    """Per-walker guide waves; electrons at mean field share one wave.

    `waves[i]` has shape (G,) when every walker of electron i sees the
    same potential (and the wave family is provably identical), else
    (M, G).
    """

    grid: Grid1D
    waves: list[np.ndarray]
    spins: tuple[str, ...]
    n_walkers: int
    frozen: np.ndarray

    def is_split(self, i: int) -> bool:
        return self.waves[i].ndim == 2

    def as_matrix(self, i: int) -> np.ndarray:
        w = self.waves[i]
        return w if w.ndim == 2 else np.broadcast_to(w, (self.n_walkers, w.shape[0]))

    def wave(self, i: int, k: int) -> np.ndarray:
        w = self.waves[i]
        return w[k] if w.ndim == 2 else w

    def orbital(self, i: int, k: int) -> Orbital:
        return Orbital(self.grid, self.wave(i, k).astype(complex))

    def k_average(self, i: int) -> np.ndarray:
        w = self.waves[i]
        return w.mean(axis=0) if w.ndim == 2 else w.copy()

    def spread(self, i: int) -> float:
        """Max over k of the L2 distance between a wave and the k-average."""
        if not self.is_split(i):
            return 0.0
        w = self.waves[i]
        diff = w - w.mean(axis=0)
        dist = np.sqrt(np.sum(np.abs(diff) ** 2 * self.grid.weights, axis=1))
        return float(dist.max())

    def copy(self) -> "GuideWaveSet":
        return GuideWaveSet(self.grid, [w.copy() for w in self.waves], self.spins,
                            self.n_walkers, self.frozen.copy())

    def structure_copy(self) -> "GuideWaveSet":
        """New container sharing the (never mutated in place) wave arrays."""
        return GuideWaveSet(self.grid, list(self.waves), self.spins,
                            self.n_walkers, self.frozen)


@dataclass
class EnergyMeasurement:
    """Mixed estimator output; walkers inside nodal regions are excluded,
    never extrapolated, and the exclusion fraction is part of the contract.

    `samples` holds the per-walker local energies (NaN where excluded) so
    that trailing measurements can be pooled into walker time-averages."""

    energy: float
    stderr: float
    excluded_fraction: float
    n_used: int
    exchange_correction: float
    samples: np.ndarray | None = None

    def __iter__(self):
        yield self.energy
        yield self.stderr


@dataclass
class RelaxationState:
    """Everything the relaxation carries from step to step."""

    config: SystemConfig
    params: NonlocalityParams
    ensemble: WalkerEnsemble
    guides: GuideWaveSet
    sigma: np.ndarray
    energy_trace: list[tuple[int, EnergyMeasurement]] = field(default_factory=list)
    hf_energy: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def step_index(self) -> int:
        return self.ensemble.step_index

    def last_energy(self) -> EnergyMeasurement:
        if not self.energy_trace:
            raise ValueError("no energy measurements recorded")
        return self.energy_trace[-1][1]


def pair_classes(params: NonlocalityParams) -> np.ndarray:
    """(N, N) matrix of PAIR_* codes for each (source j, receiver i)."""
    n = params.n_electrons
    cls = np.full((n, n), PAIR_MEAN_FIELD, dtype=np.int8)
    finite = np.isfinite(params.alpha) & (params.alpha > 0)
    cls[finite] = PAIR_WINDOWED
    cls[np.isfinite(params.alpha) & (params.alpha == 0)] = PAIR_LOCAL
    if params.sigma_fixed is not None:
        fixed = np.isfinite(params.sigma_fixed)
        cls[fixed & (params.sigma_fixed > 0)] = PAIR_WINDOWED
        cls[fixed & (params.sigma_fixed == 0)] = PAIR_LOCAL
    np.fill_diagonal(cls, PAIR_MEAN_FIELD)
    return cls


def split_mask(config: SystemConfig, params: NonlocalityParams,
               frozen: np.ndarray) -> np.ndarray:
    """Electrons whose wave family genuinely varies across walkers.

    A wave family splits when any incoming pair is windowed or local, or
    (transitively) when an equal-spin exchange partner is split. Frozen
    electrons never split.
    """
    cls = pair_classes(params)
    n = config.n_electrons
    split = np.zeros(n, dtype=bool)
    for i in range(n):
        if frozen[i]:
            continue
        incoming = [cls[j, i] for j in range(n) if j != i]
        if any(c != PAIR_MEAN_FIELD for c in incoming):
            split[i] = True
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if split[i] or frozen[i]:
                continue
            for j in range(n):
                if j != i and split[j] and config.spins[j] == config.spins[i] \
                        and config.e_squared != 0.0:
                    split[i] = True
                    changed = True
                    break
    return split


def effective_potential(i: int, k: int, ensemble: WalkerEnsemble,
                        params: NonlocalityParams, config: SystemConfig,
                        spreads: np.ndarray | None = None) -> np.ndarray:
    """Window-weighted pair potential on the grid for wave (i, k).

    Direct per-walker sums (the reference evaluation); the engine's batched
    path must agree with this up to bin interpolation error. For
    sigma = inf this is the M-sample Monte Carlo Hartree potential; for
    sigma = 0 each walker sees only its partner walker.
    """
    grid = config.grid
    if spreads is None:
        spreads = ensemble.spreads()
    sig = params.sigma_matrix(spreads)
    out = np.zeros(grid.n_points)
    for j in range(config.n_electrons):
        if j == i:
            continue
        s = sig[j, i]
        r = ensemble.positions[j]
        if s == 0.0:
            out += soft_coulomb(grid.x, r[k], config.softening_a, config.e_squared)
        elif math.isinf(s):
            out += soft_coulomb(grid.x[:, None], r[None, :], config.softening_a,
                                config.e_squared).mean(axis=1)
        else:
            w = gaussian_window(r, r[k], s)
            out += soft_coulomb(grid.x[:, None], r[None, :], config.softening_a,
                                config.e_squared) @ (w / w.sum())
    return out


class _PairTables:
    """Precomputed geometry for the binned potential assembly."""

    def __init__(self, config: SystemConfig):
        grid = config.grid
        refine = max(1, int(config.kernel_bin_refine))
        n_bins = refine * (grid.n_points - 1) + 1
        self.bin_grid = Grid1D(grid.x_min, grid.x_max, n_bins)
        self.bins_to_grid = soft_coulomb(self.bin_grid.x[:, None], grid.x[None, :],
                                         config.softening_a, config.e_squared)
        self.bins_to_grid_f32 = self.bins_to_grid.astype(np.float32)
        self.kernel_grid = interaction_matrix(grid, config.softening_a,
                                              config.e_squared)
        self.v_en = harmonic_confinement(grid.x, config.omega)

    def deposit(self, positions: np.ndarray) -> np.ndarray:
        """Cloud-in-cell histogram of walker positions on the bin grid."""
        bg = self.bin_grid
        t = np.clip((positions - bg.x_min) / bg.dx, 0.0, bg.n_points - 1 - 1e-12)
        i0 = t.astype(int)
        frac = t - i0
        n = np.zeros(bg.n_points)
        np.add.at(n, i0, 1.0 - frac)
        np.add.at(n, i0 + 1, frac)
        return n


def _batched_pair_potential(i: int, ensemble: WalkerEnsemble, sigma: np.ndarray,
                            cls: np.ndarray, config: SystemConfig,
                            tables: _PairTables) -> tuple[np.ndarray, np.ndarray | None]:
    """(shared (G,), per-walker (M, G) or None) pair potential for electron i."""
    grid = config.grid
    m = ensemble.n_walkers
    shared = np.zeros(grid.n_points)
    split: np.ndarray | None = None
    for j in range(config.n_electrons):
        if j == i:
            continue
        r = ensemble.positions[j]
        code = cls[j, i]
        if code == PAIR_MEAN_FIELD:
            shared += (tables.deposit(r) / m) @ tables.bins_to_grid
            continue
        if split is None:
            split = np.zeros((m, grid.n_points))
        if code == PAIR_LOCAL:
            split += soft_coulomb(r[:, None], grid.x[None, :], config.softening_a,
                                  config.e_squared)
        else:
            s = sigma[j, i]
            if not (s > 0.0 and np.isfinite(s)):
                raise PropagationError(
                    f"windowed pair ({j},{i}) produced sigma={s!r}", electron=i)
            density = tables.deposit(r)
            # single precision is ample here: the kernel weights carry
            # O(1/sqrt(M)) Monte Carlo noise and O(bin^2) deposit error
            arg = (tables.bin_grid.x[None, :].astype(np.float32)
                   - r[:, None].astype(np.float32))
            k_weights = np.exp(-(arg * arg) / np.float32(2.0 * s * s))
            weighted = k_weights * density[None, :].astype(np.float32)
            z = weighted.sum(axis=1)
            floor = 1e-30
            if np.any(z < floor):
                raise PropagationError(
                    f"window normalization underflow for pair ({j},{i})", electron=i)
            weighted /= z[:, None]
            split += (weighted @ tables.bins_to_grid_f32).astype(np.float64)
    return shared, split


def _exchange_actions(config: SystemConfig, guides: GuideWaveSet,
                      tables: _PairTables) -> list[np.ndarray | None]:
    """Per-electron exchange action arrays ((G,) shared, (M, G) split, or None)."""
    if config.e_squared == 0.0:
        return [None] * config.n_electrons
    grid = config.grid
    w = grid.weights
    kern = tables.kernel_grid
    actions: list[np.ndarray | None] = [None] * config.n_electrons
    for i in range(config.n_electrons):
        acc = None
        for j in range(config.n_electrons):
            if j == i or config.spins[j] != config.spins[i]:
                continue
            if guides.is_split(i) or guides.is_split(j):
                phi_i = guides.as_matrix(i)
                phi_j = guides.as_matrix(j)
            else:
                phi_i = guides.waves[i]
                phi_j = guides.waves[j]
            mixed = ((phi_i * np.conj(phi_j) * w) @ kern) * phi_j
            acc = -mixed if acc is None else acc - mixed
        actions[i] = acc
    return actions


def _orthonormalize_walker_blocks(guides: GuideWaveSet, config: SystemConfig) -> None:
    """Gram-Schmidt inside each equal-spin block, per walker, in level order.

    Frozen waves are projection references only and are never modified.
    """
    w = guides.grid.weights
    for spin in set(config.spins):
        block = config.spin_block(spin)
        basis: list[np.ndarray] = []
        for i in block:
            v = guides.waves[i]
            if guides.frozen[i]:
                basis.append(v)
                continue
            for _ in range(2):
                for u in basis:
                    proj = np.sum(v * np.conj(u) * w, axis=-1)
                    v = v - proj[..., None] * u
            norm = np.sqrt(np.abs(np.sum(np.abs(v) ** 2 * w, axis=-1)))
            v = v / norm[..., None]
            guides.waves[i] = v
            basis.append(v)


def propagate_guides(state: RelaxationState, config: SystemConfig,
                     tables: _PairTables | None = None) -> GuideWaveSet:
    """One implicit imaginary-time step for every wave, then per-walker
    orthonormalization inside equal-spin blocks (frozen electrons skipped)."""
    if tables is None:
        tables = _PairTables(config)
    guides = state.guides
    ensemble = state.ensemble
    cls = pair_classes(state.params)
    out = guides.structure_copy()
    actions = _exchange_actions(config, guides, tables)
    dtau = config.dtau

    for i in range(config.n_electrons):
        if guides.frozen[i]:
            continue
        if config.e_squared != 0.0:
            shared, split = _batched_pair_potential(i, ensemble, state.sigma, cls,
                                                    config, tables)
        else:
            shared, split = np.zeros(config.grid.n_points), None
        v_local = tables.v_en + shared
        if split is not None:
            v_local = v_local[None, :] + split
        values = guides.as_matrix(i) if (split is not None or guides.is_split(i)) \
            else guides.waves[i]
        stepped = crank_nicolson_step(values, v_local, dtau, config.grid.dx)
        if actions[i] is not None:
            stepped = stepped - dtau * np.broadcast_to(
                actions[i], stepped.shape)
        if not np.all(np.isfinite(stepped)):
            bad = np.argwhere(~np.isfinite(stepped))
            walker = int(bad[0][0]) if stepped.ndim == 2 else None
            raise PropagationError("guide wave blew up", electron=i, walker=walker,
                                   step=ensemble.step_index)
        out.waves[i] = stepped
    _orthonormalize_walker_blocks(out, config)
    return out


def _gradient_last_axis(values: np.ndarray, dx: float) -> np.ndarray:
    """Second-order first derivative (central interior, one-sided edges)."""
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2.0 * dx)
    out[..., 0] = (-3.0 * values[..., 0] + 4.0 * values[..., 1]
                   - values[..., 2]) / (2.0 * dx)
    out[..., -1] = (3.0 * values[..., -1] - 4.0 * values[..., -2]
                    + values[..., -3]) / (2.0 * dx)
    return out


def _ratio_at(grid: Grid1D, values: np.ndarray, numerator: np.ndarray,
              x: np.ndarray, floor: float):
    """(numerator/values) interpolated at x, with a nodal validity mask."""
    phi_at = interp_batched(grid, values, x)
    num_at = interp_batched(grid, numerator, x)
    scale = np.max(np.abs(values), axis=-1)
    ok = np.abs(phi_at) > floor * np.broadcast_to(scale, phi_at.shape)
    safe = np.where(ok, phi_at, 1.0)
    return num_at / safe, ok


def drift_velocity(phi: Orbital, x: float, nodal_floor: float = 1e-6) -> float:
    """Re[grad(phi)/phi] at x (imaginary-time drift; waves real up to phase)."""
    grad = _gradient_last_axis(phi.values, phi.grid.dx)
    ratio, ok = _ratio_at(phi.grid, phi.values, grad, np.asarray(x), nodal_floor)
    if not np.all(ok):
        raise NodalRegionError(f"wave amplitude below nodal floor at x={x}")
    return float(np.real(ratio)) if np.isscalar(x) or np.ndim(x) == 0 else np.real(ratio)


def bohmian_velocity(phi: Orbital, x: float, nodal_floor: float = 1e-6) -> float:
    """Im[grad(phi)/phi] at x (real-time guidance law; utility only)."""
    grad = _gradient_last_axis(phi.values, phi.grid.dx)
    ratio, ok = _ratio_at(phi.grid, phi.values, grad, np.asarray(x), nodal_floor)
    if not np.all(ok):
        raise NodalRegionError(f"wave amplitude below nodal floor at x={x}")
    return float(np.imag(ratio)) if np.isscalar(x) or np.ndim(x) == 0 else np.imag(ratio)


def advance_walkers(state: RelaxationState, config: SystemConfig,
                    noise_scale: float = 1.0) -> WalkerEnsemble:
    """Drift-diffusion move for every walker against the current guides.

    Walkers that sit in a nodal region, leave the box, or land in a nodal
    region are re-sampled from their own guide's density (preserves the
    stationary law; no reflection, no trapping at excited-state nodes).
    """
    ensemble = state.ensemble
    guides = state.guides
    grid = config.grid
    dtau = config.dtau
    step = ensemble.step_index
    noise = ensemble.streams.normals_for_step(step) * noise_scale
    cap = config.drift_cap * math.sqrt(dtau)
    new_positions = np.empty_like(ensemble.positions)
    max_imag = 0.0

    for i in range(config.n_electrons):
        values = guides.waves[i]
        grad = _gradient_last_axis(values, grid.dx)
        r = ensemble.positions[i]
        ratio, ok_now = _ratio_at(grid, values, grad, r, config.nodal_floor)
        if np.any(ok_now):
            max_imag = max(max_imag, float(np.max(np.abs(np.imag(ratio))[ok_now])))
        disp = np.clip(np.real(ratio) * dtau, -cap, cap)
        proposed = r + disp + noise[i] * math.sqrt(dtau)

        phi_new = interp_batched(grid, values, np.clip(proposed, grid.x_min, grid.x_max))
        scale = np.broadcast_to(np.max(np.abs(values), axis=-1), phi_new.shape)
        inside = (proposed > grid.x_min) & (proposed < grid.x_max)
        ok_new = inside & (np.abs(phi_new) > config.nodal_floor * scale)
        bad = ~(ok_now & ok_new)

        if np.any(bad):
            if guides.is_split(i):
                for k in np.nonzero(bad)[0]:
                    cdf = density_cdf(grid, np.abs(values[k]) ** 2)
                    u = np.array([ensemble.streams.uniform_for(int(k))])
                    proposed[k] = sample_from_cdf(grid, cdf, u)[0]
            else:
                cdf = density_cdf(grid, np.abs(values) ** 2)
                for k in np.nonzero(bad)[0]:
                    u = np.array([ensemble.streams.uniform_for(int(k))])
                    proposed[k] = sample_from_cdf(grid, cdf, u)[0]
        new_positions[i] = proposed

    if max_imag > 1e-8:
        warnings.warn(f"drift ratio has imaginary part {max_imag:.2e} "
                      "(guides no longer real up to a global phase)", stacklevel=2)
    return WalkerEnsemble(new_positions, ensemble.spins, step + 1, ensemble.streams)


def measure_energy(state: RelaxationState, config: SystemConfig,
                   n_blocks: int = 32,
                   tables: _PairTables | None = None) -> EnergyMeasurement:
    """Mixed estimator: per-walker local energies plus the per-walker
    exchange double integral, averaged over walkers with block-average SE."""
    if tables is None:
        tables = _PairTables(config)
    grid = config.grid
    guides = state.guides
    positions = state.ensemble.positions
    m = state.ensemble.n_walkers
    local = np.zeros(m)
    valid = np.ones(m, dtype=bool)

    for i in range(config.n_electrons):
        values = guides.waves[i]
        lap = laplacian_values(values, grid.dx)
        ratio, ok = _ratio_at(grid, values, lap, positions[i], config.nodal_floor)
        valid &= ok
        local += np.where(ok, -0.5 * np.real(ratio), 0.0)
        local += harmonic_confinement(positions[i], config.omega)

    for i in range(config.n_electrons):
        for j in range(i):
            local += soft_coulomb(positions[i], positions[j], config.softening_a,
                                  config.e_squared)

    exchange = np.zeros(m)
    if config.e_squared != 0.0:
        w = grid.weights
        kern = tables.kernel_grid
        for i in range(config.n_electrons):
            for j in range(config.n_electrons):
                if j == i or config.spins[j] != config.spins[i]:
                    continue
                if guides.is_split(i) or guides.is_split(j):
                    u = guides.as_matrix(i) * np.conj(guides.as_matrix(j))
                    quad = np.real(np.einsum("kg,kg->k", (u * w) @ kern,
                                             np.conj(u) * w))
                else:
                    u = guides.waves[i] * np.conj(guides.waves[j])
                    quad = float(np.real(np.conj(u * w) @ kern @ (u * w)))
                exchange -= 0.5 * quad

    total = local + exchange
    n_used = int(valid.sum())
    if n_used == 0:
        raise PropagationError("all walkers excluded from the energy estimator")
    excluded = 1.0 - n_used / m
    if excluded >= 0.01:
        warnings.warn(f"nodal exclusion fraction {excluded:.1%} exceeds 1%",
                      stacklevel=2)
    energy = float(total[valid].mean())

    stderr = _block_stderr(total, valid, n_blocks)
    samples = np.where(valid, total, np.nan)
    return EnergyMeasurement(energy, stderr, excluded, n_used,
                             float(exchange[valid].mean()), samples)


def _block_stderr(total: np.ndarray, valid: np.ndarray, n_blocks: int) -> float:
    m = total.shape[0]
    block_ids = np.minimum((np.arange(m) * n_blocks) // m, n_blocks - 1)
    means = []
    for b in range(n_blocks):
        sel = valid & (block_ids == b)
        if np.any(sel):
            means.append(total[sel].mean())
    means = np.array(means)
    return float(means.std(ddof=1) / math.sqrt(len(means))) if len(means) > 1 else 0.0


def pooled_energy(state: RelaxationState, window: int = 1,
                  n_blocks: int = 32) -> EnergyMeasurement:
    """Combine the last `window` trace measurements into one estimate.

    Each walker's local energies are first averaged over the snapshots
    (temporal correlation stays inside the per-walker average), then the
    walker means are block-averaged for the standard error.
    """
    entries = [m for _, m in state.energy_trace[-window:]]
    if not entries:
        raise ValueError("no energy measurements recorded")
    if any(m.samples is None for m in entries):
        raise ValueError("pooling requires measurements with samples")
    stack = np.stack([m.samples for m in entries])
    counts = np.sum(~np.isnan(stack), axis=0)
    valid = counts > 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        totals = np.nanmean(stack, axis=0)
    totals = np.where(valid, totals, 0.0)
    energy = float(totals[valid].mean())
    stderr = _block_stderr(totals, valid, n_blocks)
    excluded = float(np.mean([m.excluded_fraction for m in entries]))
    exchange = float(np.mean([m.exchange_correction for m in entries]))
    return EnergyMeasurement(energy, stderr, excluded, int(valid.sum()), exchange)


def initial_state(config: SystemConfig, params: NonlocalityParams,
                  master_seed=0, hf_state: HFState | None = None,
                  frozen: np.ndarray | None = None) -> RelaxationState:
    """Guides from the self-consistent orbitals, walkers from their densities."""
    if params.n_electrons != config.n_electrons:
        raise ConfigError("params matrix size does not match n_electrons")
    if hf_state is None:
        hf_state = hf_solve(config)
    grid = config.grid
    m = config.n_walkers
    frozen = np.zeros(config.n_electrons, dtype=bool) if frozen is None \
        else np.asarray(frozen, dtype=bool)

    split = split_mask(config, params, frozen)
    waves: list[np.ndarray] = []
    for i, orb in enumerate(hf_state.orbitals):
        # imaginary-time waves are real up to a global phase; store real
        if np.max(np.abs(orb.values.imag)) < 1e-12:
            base = np.ascontiguousarray(orb.values.real)
        else:
            base = orb.values.astype(complex)
        waves.append(np.tile(base, (m, 1)) if split[i] else base.copy())
    guides = GuideWaveSet(grid, waves, config.spins, m, frozen)

    streams = WalkerStreams(master_seed, m, config.n_electrons, config.rng_chunk)
    uniforms = streams.initial_uniforms()
    positions = np.empty((config.n_electrons, m))
    for i, orb in enumerate(hf_state.orbitals):
        cdf = density_cdf(grid, np.abs(orb.values) ** 2)
        positions[i] = sample_from_cdf(grid, cdf, uniforms[i])
    ensemble = WalkerEnsemble(positions, config.spins, 0, streams)

    sigma = params.sigma_matrix(ensemble.spreads())
    return RelaxationState(config, params, ensemble, guides, sigma,
                           hf_energy=hf_state.energy)


def run_relaxation(state: RelaxationState, config: SystemConfig, n_steps: int,
                   noise_scale: float = 1.0,
                   checkpoint_path=None, checkpoint_every: int | None = None,
                   measure: bool = True) -> RelaxationState:
    """Alternate walker moves and guide steps for n_steps more steps."""
    tables = _PairTables(config)
    if checkpoint_every is not None:
        if checkpoint_path is None:
            raise ConfigError("checkpoint_every needs a checkpoint path")
        if checkpoint_every % config.rng_chunk != 0:
            raise ConfigError("checkpoint_every must be a multiple of rng_chunk "
                              f"({config.rng_chunk})")
    target = state.step_index + n_steps
    frozen_sigma = state.sigma.copy()

    while state.step_index < target:
        if config.sigma_update == "per_step":
            state.sigma = state.params.sigma_matrix(state.ensemble.spreads())
        else:
            state.sigma = frozen_sigma
        new_ensemble = advance_walkers(state, config, noise_scale)
        new_guides = propagate_guides(state, config, tables)
        state.ensemble = new_ensemble
        state.guides = new_guides
        step = state.step_index
        if measure and (step % config.trace_every == 0 or step == target):
            state.energy_trace.append((step, measure_energy(state, config,
                                                            tables=tables)))
        if checkpoint_every is not None and step % checkpoint_every == 0 \
                and step < target:
            save_checkpoint(checkpoint_path, state, target)
    if measure and (not state.energy_trace
                    or state.energy_trace[-1][0] != state.step_index):
        state.energy_trace.append((state.step_index,
                                   measure_energy(state, config, tables=tables)))
    return state


def prepare_ground_state(config: SystemConfig, params: NonlocalityParams,
                         master_seed=0, hf_state: HFState | None = None,
                         frozen: np.ndarray | None = None,
                         n_steps: int | None = None,
                         checkpoint_path=None,
                         checkpoint_every: int | None = None) -> RelaxationState:
    """Full ground-state preparation: initialize from the self-consistent
    orbitals and relax walkers and waves together for n_steps."""
    state = initial_state(config, params, master_seed, hf_state, frozen)
    steps = config.n_steps if n_steps is None else n_steps
    return run_relaxation(state, config, steps, checkpoint_path=checkpoint_path,
                          checkpoint_every=checkpoint_every)


def walker_marginal_pvalue(state: RelaxationState, i: int, bins: int = 32,
                           min_expected: float = 5.0) -> float:
    """Chi-square p-value of walker marginal i against its guide density."""
    grid = state.config.grid
    dens = np.mean(np.abs(state.guides.as_matrix(i)) ** 2, axis=0)
    cdf = density_cdf(grid, dens)
    cdf = cdf / cdf[-1]
    edges = np.linspace(grid.x_min, grid.x_max, bins + 1)
    probs = np.diff(np.interp(edges, grid.x, cdf))
    counts, _ = np.histogram(state.ensemble.positions[i], bins=edges)

    # merge sparse bins so the chi-square approximation holds
    m_counts, m_probs = [], []
    acc_c, acc_p = 0.0, 0.0
    total = counts.sum()
    for c, p in zip(counts, probs):
        acc_c += c
        acc_p += p
        if acc_p * total >= min_expected:
            m_counts.append(acc_c)
            m_probs.append(acc_p)
            acc_c, acc_p = 0.0, 0.0
    if acc_p > 0:
        if m_counts:
            m_counts[-1] += acc_c
            m_probs[-1] += acc_p
        else:
            m_counts.append(acc_c)
            m_probs.append(acc_p)
    m_counts = np.array(m_counts, dtype=float)
    m_probs = np.array(m_probs, dtype=float)
    m_probs /= m_probs.sum()
    stat = np.sum((m_counts - total * m_probs) ** 2 / (total * m_probs))
    dof = len(m_counts) - 1
    return float(scipy_stats.chi2.sf(stat, dof)) if dof > 0 else 1.0


def per_walker_orthonormality_error(guides: GuideWaveSet, config: SystemConfig) -> float:
    """Max deviation of any per-walker equal-spin overlap matrix from identity."""
    w = guides.grid.weights
    worst = 0.0
    for spin in set(config.spins):
        block = config.spin_block(spin)
        if len(block) < 2:
            block = list(block)
        mats = [guides.as_matrix(i) for i in block]
        for a in range(len(block)):
            for b in range(len(block)):
                ov = np.sum(mats[a] * np.conj(mats[b]) * w, axis=-1)
                target = 1.0 if a == b else 0.0
                worst = max(worst, float(np.max(np.abs(ov - target))))
    return worst


# -- checkpointing ----------------------------------------------------------

def save_checkpoint(path, state: RelaxationState, n_steps_total: int) -> None:
    """Versioned snapshot that round-trips bit-exactly (chunk-aligned steps)."""
    from .configfile import config_to_dict

    trace_steps = np.array([s for s, _ in state.energy_trace], dtype=int)
    trace_vals = np.array([[m.energy, m.stderr, m.excluded_fraction,
                            m.n_used, m.exchange_correction]
                           for _, m in state.energy_trace])
    m_walkers = state.ensemble.n_walkers
    trace_samples = np.full((len(trace_steps), m_walkers), np.nan)
    for row, (_, meas) in enumerate(state.energy_trace):
        if meas.samples is not None:
            trace_samples[row] = meas.samples
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "config_json": np.array(json.dumps(config_to_dict(state.config))),
        "alpha": state.params.alpha,
        "has_sigma_fixed": np.array(state.params.sigma_fixed is not None),
        "sigma_fixed": (state.params.sigma_fixed
                        if state.params.sigma_fixed is not None
                        else np.zeros_like(state.params.alpha)),
        "positions": state.ensemble.positions,
        "step_index": np.array(state.ensemble.step_index),
        "n_steps_total": np.array(n_steps_total),
        "sigma": state.sigma,
        "frozen": state.guides.frozen,
        "split": np.array([state.guides.is_split(i)
                           for i in range(state.config.n_electrons)]),
        "rng_states": np.array(json.dumps(state.ensemble.streams.state_list())),
        "hf_energy": np.array(-1.0 if state.hf_energy is None else state.hf_energy),
        "trace_steps": trace_steps,
        "trace_vals": trace_vals.reshape(len(trace_steps), 5) if len(trace_steps)
        else np.zeros((0, 5)),
        "trace_samples": trace_samples,
    }
    for i, wave in enumerate(state.guides.waves):
        arrays[f"wave_{i}"] = wave
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[RelaxationState, int]:
    """Rebuild a RelaxationState plus the total step target."""
    from .configfile import config_from_dict

    data = np.load(path, allow_pickle=False)
    if int(data["version"]) != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {int(data['version'])}")
    config = config_from_dict(json.loads(str(data["config_json"])))
    sigma_fixed = data["sigma_fixed"] if bool(data["has_sigma_fixed"]) else None
    params = NonlocalityParams(data["alpha"], sigma_fixed)

    streams = WalkerStreams(0, config.n_walkers, config.n_electrons,
                            config.rng_chunk)
    streams.restore(json.loads(str(data["rng_states"])))
    ensemble = WalkerEnsemble(data["positions"], config.spins,
                              int(data["step_index"]), streams)
    waves = [np.array(data[f"wave_{i}"]) for i in range(config.n_electrons)]
    guides = GuideWaveSet(config.grid, waves, config.spins, config.n_walkers,
                          np.array(data["frozen"], dtype=bool))
    hf_energy = float(data["hf_energy"])
    trace = []
    samples_rows = data["trace_samples"] if "trace_samples" in data else None
    for idx, (step, row) in enumerate(zip(data["trace_steps"], data["trace_vals"])):
        samples = samples_rows[idx] if samples_rows is not None else None
        trace.append((int(step), EnergyMeasurement(row[0], row[1], row[2],
                                                   int(row[3]), row[4], samples)))
    state = RelaxationState(config, params, ensemble, guides,
                            np.array(data["sigma"]), trace,
                            hf_energy=None if hf_energy < 0 else hf_energy)
    return state, int(data["n_steps_total"])


def resume_ground_state(path, checkpoint_path=None,
                        checkpoint_every: int | None = None) -> RelaxationState:
    """Finish the relaxation recorded in a checkpoint."""
    state, target = load_checkpoint(path)
    remaining = target - state.step_index
    if remaining <= 0:
        return state
    return run_relaxation(state, state.config, remaining,
                          checkpoint_path=checkpoint_path,
                          checkpoint_every=checkpoint_every)
