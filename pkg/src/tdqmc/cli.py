"""Command-line front end.

Commands: hf, scan, series, oracle, resume. Batch-only: every command
reads a flat key-value config, writes delimited results plus rendered
figures into the out dir (default $TDQMC_OUT or .), and records a
manifest whose hash every output references.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 capacity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .configfile import config_to_dict, load_config
from .engine import (pooled_energy, prepare_ground_state, resume_ground_state,
                     save_checkpoint)
from .entanglement import linear_entropy, linear_entropy_identical, rdm_identical
from .errors import (CapacityError, ConfigError, ConvergenceError,
                     DegeneracyError, NodalRegionError, PropagationError,
                     SymmetryError)
from .experiments import (ScanSpec, nonlocality_scan, report_to_json, scan_params,
                          spin_compensated_series, spin_polarized_series,
                          write_compensated_csvs, write_polarized_csvs,
                          write_scan_csv)
from .hartree_fock import hf_solve
from .manifest import RunManifest
from . import oracle as oracle_mod

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CAPACITY = 4


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("TDQMC_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_range(text: str) -> tuple[float, ...]:
    """'0.2:2.0:10' -> 10 evenly spaced values from 0.2 to 2.0."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"range {text!r}: expected start:stop:count")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"range {text!r}: expected numbers start:stop:count")
    if count < 1:
        raise ConfigError("scan range needs at least one point")
    return tuple(np.linspace(start, stop, count).round(10))


def cmd_hf(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    manifest = RunManifest("hf", args.seed, config_to_dict(config), out)
    state = hf_solve(config)

    report = {
        "kinetic": state.energy_report.kinetic,
        "external": state.energy_report.external,
        "hartree": state.energy_report.hartree,
        "exchange": state.energy_report.exchange,
        "total": state.energy_report.total,
        "steps": state.n_steps,
        "manifest": manifest.hash,
    }
    report_path = out / "hf_report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    manifest.record(report_path)

    orb_path = out / "orbitals.csv"
    with open(orb_path, "w", newline="") as fh:
        for key, value in manifest.metadata().items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh)
        writer.writerow(["x"] + [f"re_phi_{i}" for i in range(config.n_electrons)]
                        + [f"im_phi_{i}" for i in range(config.n_electrons)])
        for g, x in enumerate(config.grid.x):
            row = [f"{x:.10g}"]
            row += [f"{orb.values[g].real:.12g}" for orb in state.orbitals]
            row += [f"{orb.values[g].imag:.12g}" for orb in state.orbitals]
            writer.writerow(row)
    manifest.record(orb_path)

    if not args.no_plots:
        from .plots import render_orbitals
        manifest.record(render_orbitals(config.grid.x,
                                        [o.values for o in state.orbitals],
                                        out / "orbitals.png", manifest.metadata()))
    manifest.write()
    print(f"hf: total energy {state.energy_report.total:.6f} "
          f"(converged in {state.n_steps} steps) -> {report_path}")
    return EXIT_OK


def cmd_scan(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    if args.alpha and args.sigma:
        raise ConfigError("give either --alpha or --sigma, not both")
    if args.alpha:
        values, parameter = _parse_range(args.alpha), "alpha"
    elif args.sigma:
        values, parameter = _parse_range(args.sigma), "sigma"
    else:
        raise ConfigError("scan needs --alpha start:stop:count "
                          "or --sigma start:stop:count")
    pairs = {"ground-row": "ground_row", "outer": "outer"}.get(args.pairs)
    if pairs is None:
        raise ConfigError(f"--pairs: unknown pair mask {args.pairs!r}")
    spec = ScanSpec(pairs=pairs, values=values, parameter=parameter,
                    fit_degree=args.fit_degree)

    manifest = RunManifest("scan", args.seed, config_to_dict(config), out,
                           extra={"pairs": pairs, "parameter": parameter,
                                  "values": list(values)})
    frozen = None
    if pairs == "outer" and config.n_electrons > 2:
        frozen = np.zeros(config.n_electrons, dtype=bool)
        frozen[:config.n_electrons - 2] = True
    hf_state = hf_solve(config)
    result = nonlocality_scan(config, spec, master_seed=args.seed,
                              hf_state=hf_state, frozen=frozen,
                              threads=args.threads)
    if args.checkpoint_every:
        # re-run the best point, dropping periodic checkpoints for `resume`
        params = scan_params(spec, config.n_electrons, result.minimum[0])
        prepare_ground_state(config, params, master_seed=args.seed,
                             hf_state=hf_state, frozen=frozen,
                             checkpoint_path=out / "relaxation.ckpt.npz",
                             checkpoint_every=args.checkpoint_every)
        manifest.record(out / "relaxation.ckpt.npz")

    csv_path = out / f"fig3_scan_N{config.n_electrons}.csv"
    manifest.record(write_scan_csv(result, csv_path, manifest.metadata()))
    summary = {
        "manifest": manifest.hash,
        "parameter": result.parameter,
        "minimum": {"value": result.minimum[0], "energy": result.minimum[1]},
        "raw_minimum": {"value": result.raw_minimum[0],
                        "energy": result.raw_minimum[1]},
        "boundary_minimum": result.boundary_minimum,
        "hf_energy": hf_state.energy,
        "fit_residual_rms": result.fit_residual_rms,
        "median_se": result.median_se,
    }
    summary_path = out / "scan_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest.record(summary_path)

    if not args.no_plots:
        from .plots import render_scan
        manifest.record(render_scan(result, csv_path.with_suffix(".png"),
                                    manifest.metadata(),
                                    title=f"N={config.n_electrons}"))
    manifest.write()
    flag = " (boundary)" if result.boundary_minimum else ""
    print(f"scan: minimum {result.parameter}={result.minimum[0]:.4g} "
          f"E={result.minimum[1]:.6f}{flag} -> {csv_path}")
    return EXIT_OK


def cmd_series(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    if args.kind not in ("polarized", "compensated"):
        raise ConfigError(f"series kind must be polarized or compensated, "
                          f"got {args.kind!r}")
    manifest = RunManifest(f"series-{args.kind}", args.seed,
                           config_to_dict(config), out,
                           extra={"max_levels": args.max_levels,
                                  "max_shells": args.max_shells,
                                  "oracle": not args.no_oracle})
    if args.kind == "polarized":
        report = spin_polarized_series(config, max_levels=args.max_levels,
                                       master_seed=args.seed,
                                       with_oracle=not args.no_oracle,
                                       threads=args.threads)
        paths = write_polarized_csvs(report, out, manifest.metadata())
    else:
        report = spin_compensated_series(config, max_shells=args.max_shells,
                                         master_seed=args.seed,
                                         with_oracle=not args.no_oracle,
                                         threads=args.threads)
        paths = write_compensated_csvs(report, out, manifest.metadata())
    for p in paths:
        manifest.record(p)

    summary_path = out / "series_summary.json"
    payload = report_to_json(report)
    payload["manifest"] = manifest.hash
    summary_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    manifest.record(summary_path)

    if not args.no_plots:
        from .plots import render_series
        for p in render_series(report, out, manifest.metadata()):
            manifest.record(p)
    manifest.write()
    print(f"series ({args.kind}): {len(report.rows)} rows -> "
          f"{', '.join(p.name for p in paths)}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    spec = oracle_mod.OracleSpec(n_points=args.oracle_points,
                                 x_max=args.oracle_box)
    symmetry = args.symmetry
    if symmetry == "auto":
        has_pair = any(config.spins.count(s) > 1 for s in set(config.spins))
        if config.n_electrons == 1:
            symmetry = oracle_mod.NONE
        elif has_pair:
            symmetry = oracle_mod.ANTISYMMETRIC
        else:
            symmetry = oracle_mod.SYMMETRIC
    manifest = RunManifest("oracle", args.seed, config_to_dict(config), out,
                           extra={"symmetry": symmetry,
                                  "n_points": spec.n_points,
                                  "x_max": spec.x_max})

    psi, energy = oracle_mod.exact_ground_state(config, symmetry, spec)
    dm = oracle_mod.one_body_rdm(psi)
    n_up = config.spins.count("up")
    entropies = {
        "distinguishable": linear_entropy(dm),
        "identical": linear_entropy_identical(dm, max(n_up, 1)).value,
        "n_same_spin": max(n_up, 1),
    }
    ref_path = out / "oracle_reference.json"
    entry = oracle_mod.save_reference(ref_path, config, symmetry, spec, energy,
                                      entropies)
    manifest.record(ref_path)
    manifest.write()
    key = next(iter(entry))
    print(f"oracle: E={energy:.8f} entropies={entropies} "
          f"[{key}] -> {ref_path}")
    return EXIT_OK


def cmd_resume(args) -> int:
    out = _out_dir(args)
    state = resume_ground_state(args.checkpoint)
    meas = pooled_energy(state, window=min(10, len(state.energy_trace)))
    config = state.config
    manifest = RunManifest("resume", args.seed, config_to_dict(config), out,
                           extra={"checkpoint": str(args.checkpoint)})
    n_up = config.spins.count("up")
    dm = rdm_identical("up", state.guides, config.spins)
    result = {
        "manifest": manifest.hash,
        "energy": meas.energy,
        "stderr": meas.stderr,
        "excluded_fraction": meas.excluded_fraction,
        "entropy_identical": linear_entropy_identical(dm, max(n_up, 1)).value,
        "steps_completed": state.step_index,
    }
    path = out / "resumed_point.json"
    path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    manifest.record(path)
    if args.checkpoint_out:
        save_checkpoint(args.checkpoint_out, state, state.step_index)
        manifest.record(Path(args.checkpoint_out))
    manifest.write()
    print(f"resume: finished at step {state.step_index}, "
          f"E={meas.energy:.6f} -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdqmc",
        description="Walker/guide-wave ground states and spatial entanglement "
                    "for 1D quantum dots")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=12345,
                       help="master seed (default 12345)")
        p.add_argument("--out-dir", default=None,
                       help="output directory (default $TDQMC_OUT or .)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads; affects wall time only")
        p.add_argument("--no-plots", action="store_true",
                       help="skip figure rendering")

    p_hf = sub.add_parser("hf", help="self-consistent field ground state")
    p_hf.add_argument("--config", required=True)
    common(p_hf)

    p_scan = sub.add_parser("scan", help="nonlocality parameter scan")
    p_scan.add_argument("--config", required=True)
    p_scan.add_argument("--pairs", default="ground-row",
                        help="ground-row or outer (default ground-row)")
    p_scan.add_argument("--alpha", default=None, metavar="A:B:K",
                        help="alpha grid start:stop:count")
    p_scan.add_argument("--sigma", default=None, metavar="A:B:K",
                        help="sigma grid start:stop:count")
    p_scan.add_argument("--fit-degree", type=int, default=4)
    p_scan.add_argument("--checkpoint-every", type=int, default=None,
                        help="write relaxation checkpoints every K steps "
                             "(multiple of propagation.rng_chunk)")
    common(p_scan)

    p_series = sub.add_parser("series", help="electron-count series")
    p_series.add_argument("--config", required=True)
    p_series.add_argument("--kind", required=True,
                          help="polarized or compensated")
    p_series.add_argument("--max-levels", type=int, default=4)
    p_series.add_argument("--max-shells", type=int, default=5)
    p_series.add_argument("--no-oracle", action="store_true")
    common(p_series)

    p_oracle = sub.add_parser("oracle", help="exact few-body reference")
    p_oracle.add_argument("--config", required=True)
    p_oracle.add_argument("--symmetry", default="auto",
                          choices=["auto", "antisymmetric", "symmetric", "none"])
    p_oracle.add_argument("--oracle-points", type=int, default=96)
    p_oracle.add_argument("--oracle-box", type=float, default=6.0)
    common(p_oracle)

    p_resume = sub.add_parser("resume", help="finish a checkpointed relaxation")
    p_resume.add_argument("checkpoint")
    p_resume.add_argument("--checkpoint-out", default=None)
    common(p_resume)
    return parser


_DISPATCH = {
    "hf": cmd_hf,
    "scan": cmd_scan,
    "series": cmd_series,
    "oracle": cmd_oracle,
    "resume": cmd_resume,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _DISPATCH[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ConvergenceError, PropagationError, DegeneracyError,
            NodalRegionError, SymmetryError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
