"""Flat dotted key-value config files.

Human-diffable format, one `section.key = value` per line, `#` comments.
Example:

    system.n_electrons = 2
    system.spins = up,down
    system.omega = 1.0
    grid.x_max = 8.0
    grid.n_points = 256
    propagation.dtau = 0.01
    propagation.n_steps = 200

Unknown keys are rejected with the offending field named, so typos fail
loudly instead of silently running defaults.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .model import (SystemConfig, spin_compensated_spins, spin_polarized_spins)
from .numerics import Grid1D

_INT_KEYS = {
    "system.n_electrons": "n_electrons",
    "system.n_walkers": "n_walkers",
    "grid.n_points": None,
    "propagation.n_steps": "n_steps",
    "propagation.trace_every": "trace_every",
    "propagation.rng_chunk": "rng_chunk",
    "engine.kernel_bin_refine": "kernel_bin_refine",
    "hf.max_steps": "hf_max_steps",
}
_FLOAT_KEYS = {
    "system.omega": "omega",
    "system.softening_a": "softening_a",
    "system.e_squared": "e_squared",
    "grid.x_max": None,
    "propagation.dtau": "dtau",
    "engine.drift_cap": "drift_cap",
    "engine.nodal_floor": "nodal_floor",
    "hf.tol": "hf_tol",
}
_STR_KEYS = {
    "system.spins": None,
    "propagation.sigma_update": "sigma_update",
}
KNOWN_KEYS = set(_INT_KEYS) | set(_FLOAT_KEYS) | set(_STR_KEYS)


def parse_pairs(text: str) -> dict[str, str]:
    """Raw key -> value map from config text."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def _parse_spins(value: str, n_electrons: int) -> tuple[str, ...]:
    value = value.strip().lower()
    if value in ("polarized", "spin-polarized"):
        return spin_polarized_spins(n_electrons)
    if value in ("compensated", "spin-compensated"):
        return spin_compensated_spins(n_electrons)
    return tuple(s.strip() for s in value.split(",") if s.strip())


def config_from_text(text: str) -> SystemConfig:
    pairs = parse_pairs(text)
    unknown = sorted(set(pairs) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    if "system.n_electrons" not in pairs:
        raise ConfigError("n_electrons: missing required key system.n_electrons")

    kwargs = {}
    for key, field_name in _INT_KEYS.items():
        if key in pairs and field_name:
            try:
                kwargs[field_name] = int(pairs[key])
            except ValueError:
                raise ConfigError(f"{key}: expected an integer, got {pairs[key]!r}")
    for key, field_name in _FLOAT_KEYS.items():
        if key in pairs and field_name:
            try:
                kwargs[field_name] = float(pairs[key])
            except ValueError:
                raise ConfigError(f"{key}: expected a number, got {pairs[key]!r}")
    if "propagation.sigma_update" in pairs:
        kwargs["sigma_update"] = pairs["propagation.sigma_update"]

    n_electrons = int(pairs["system.n_electrons"])
    spins_text = pairs.get("system.spins", "polarized")
    spins = _parse_spins(spins_text, n_electrons)

    x_max = float(pairs.get("grid.x_max", 8.0))
    n_points = int(pairs.get("grid.n_points", 256))
    grid = Grid1D(-x_max, x_max, n_points)

    return SystemConfig(n_electrons=n_electrons, spins=spins, grid=grid, **kwargs)


def load_config(path) -> SystemConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return config_from_text(path.read_text())


def config_to_text(config: SystemConfig) -> str:
    lines = [
        f"system.n_electrons = {config.n_electrons}",
        f"system.spins = {','.join(config.spins)}",
        f"system.omega = {config.omega!r}",
        f"system.softening_a = {config.softening_a!r}",
        f"system.e_squared = {config.e_squared!r}",
        f"system.n_walkers = {config.n_walkers}",
        f"grid.x_max = {config.grid.x_max!r}",
        f"grid.n_points = {config.grid.n_points}",
        f"propagation.dtau = {config.dtau!r}",
        f"propagation.n_steps = {config.n_steps}",
        f"propagation.sigma_update = {config.sigma_update}",
        f"propagation.trace_every = {config.trace_every}",
        f"propagation.rng_chunk = {config.rng_chunk}",
        f"engine.kernel_bin_refine = {config.kernel_bin_refine}",
        f"engine.drift_cap = {config.drift_cap!r}",
        f"engine.nodal_floor = {config.nodal_floor!r}",
        f"hf.max_steps = {config.hf_max_steps}",
        f"hf.tol = {config.hf_tol!r}",
    ]
    return "\n".join(lines) + "\n"


def config_to_dict(config: SystemConfig) -> dict:
    return {
        "n_electrons": config.n_electrons,
        "spins": list(config.spins),
        "omega": config.omega,
        "softening_a": config.softening_a,
        "e_squared": config.e_squared,
        "n_walkers": config.n_walkers,
        "grid": {"x_min": config.grid.x_min, "x_max": config.grid.x_max,
                 "n_points": config.grid.n_points},
        "dtau": config.dtau,
        "n_steps": config.n_steps,
        "sigma_update": config.sigma_update,
        "hf_max_steps": config.hf_max_steps,
        "hf_tol": config.hf_tol,
        "trace_every": config.trace_every,
        "rng_chunk": config.rng_chunk,
        "kernel_bin_refine": config.kernel_bin_refine,
        "drift_cap": config.drift_cap,
        "nodal_floor": config.nodal_floor,
    }


def config_from_dict(data: dict) -> SystemConfig:
    grid = Grid1D(data["grid"]["x_min"], data["grid"]["x_max"],
                  data["grid"]["n_points"])
    kwargs = {k: v for k, v in data.items() if k != "grid"}
    kwargs["spins"] = tuple(kwargs["spins"])
    return SystemConfig(grid=grid, **kwargs)
