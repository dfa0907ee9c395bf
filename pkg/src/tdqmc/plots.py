"""Figure rendering for scan and series outputs.

Every report path writes a PNG next to its CSV. Figures are plain
matplotlib: error bars for the sampled energies, a smooth line for the
polynomial fit, a marker on the fitted minimum.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import ScanResult, SeriesReport


def _new_axes(xlabel: str, ylabel: str):
    fig, ax = plt.subplots(figsize=(5.0, 3.4), dpi=150)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.4)
    return fig, ax


def _save(fig, path: Path, metadata: dict) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata={"Description": f"manifest {metadata.get('manifest', '')}"})
    plt.close(fig)
    return Path(path)


def render_scan(result: ScanResult, path: Path, metadata: dict,
                title: str = "") -> Path:
    label = "sigma (a.u.)" if result.parameter == "sigma" else "alpha"
    fig, ax = _new_axes(label, "energy (a.u.)")
    e = np.array([m for m, _ in result.energies])
    se = np.array([s for _, s in result.energies])
    ax.errorbar(result.scan_values, e, yerr=se, fmt="o", ms=4, capsize=3,
                label="relaxed energy")
    xs, fit = result.fit_curve()
    ax.plot(xs, fit, "-", color="tab:red", lw=1.2,
            label=f"degree-{len(result.fit_coefficients) - 1} fit")
    ax.plot(*result.minimum, "v", color="tab:red", ms=8,
            label=f"minimum {result.minimum[0]:.3g}")
    if title:
        ax.set_title(title, fontsize=10)
    ax.legend(fontsize=8)
    return _save(fig, path, metadata)


def render_series(report: SeriesReport, out_dir: Path, metadata: dict) -> list[Path]:
    out_dir = Path(out_dir)
    prefix = "fig2" if report.kind == "polarized" else "fig4"
    xs = [r.n_electrons for r in report.rows]
    xlabel = "number of electrons"
    paths = []

    fig, ax = _new_axes(xlabel, "energy (a.u.)")
    ax.errorbar(xs, [r.e_tdqmc for r in report.rows],
                yerr=[r.se for r in report.rows], fmt="o-", ms=4, capsize=3,
                label="TDQMC")
    ax.plot(xs, [r.e_hf for r in report.rows], "s--", ms=4, label="Hartree-Fock")
    oracle_pts = [(r.n_electrons, r.e_oracle) for r in report.rows
                  if r.e_oracle is not None]
    if oracle_pts:
        ax.plot(*zip(*oracle_pts), "^:", ms=5, color="tab:green", label="exact")
    ax.legend(fontsize=8)
    paths.append(_save(fig, out_dir / f"{prefix}a_energy.png", metadata))

    fig, ax = _new_axes(xlabel, "linear entropy")
    ax.plot(xs, [r.entropy_identical for r in report.rows], "o-", ms=4,
            label="identical")
    oracle_pts = [(r.n_electrons, r.entropy_identical_oracle) for r in report.rows
                  if r.entropy_identical_oracle is not None]
    if oracle_pts:
        ax.plot(*zip(*oracle_pts), "^:", ms=5, color="tab:green", label="exact")
    if report.kind == "polarized":
        for r in report.rows:
            ax.plot([r.n_electrons] * len(r.entropy_distinguishable),
                    r.entropy_distinguishable, ".", color="tab:red", ms=5)
        ax.plot([], [], ".", color="tab:red", label="distinguishable (per electron)")
    ax.legend(fontsize=8)
    paths.append(_save(fig, out_dir / f"{prefix}b_entropy.png", metadata))

    fig, ax = _new_axes(xlabel, "optimal window")
    if report.kind == "polarized":
        ax.plot(xs, [r.alpha_star for r in report.rows], "o-", ms=4, label="alpha*")
        ax.plot(xs, [r.sigma_star for r in report.rows], "s--", ms=4,
                label="sigma* (a.u.)")
        name = f"{prefix}c_alpha.png"
    else:
        ax.plot(xs, [r.sigma_star for r in report.rows], "o-", ms=4,
                label="sigma* (a.u.)")
        ax.plot(xs, [r.alpha_star for r in report.rows], "s--", ms=4, label="alpha*")
        name = f"{prefix}c_sigma.png"
    ax.legend(fontsize=8)
    paths.append(_save(fig, out_dir / name, metadata))
    return paths


def render_orbitals(grid_x, orbitals, path: Path, metadata: dict) -> Path:
    fig, ax = _new_axes("x (a.u.)", "orbital density")
    for i, values in enumerate(orbitals):
        ax.plot(grid_x, np.abs(values) ** 2, lw=1.2, label=f"orbital {i}")
    ax.legend(fontsize=8)
    return _save(fig, path, metadata)
