"""Run manifests: fingerprint, seed, command, and output inventory.

The fingerprint hashes only inputs that determine results (config, params,
seed, command), never timestamps, so re-running a manifest reproduces the
result files byte for byte while the manifest itself records when it ran.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__


def fingerprint(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class RunManifest:
    command: str
    master_seed: int
    config_payload: dict
    out_dir: Path
    extra: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)
    outputs: list[str] = field(default_factory=list)

    @property
    def hash(self) -> str:
        return fingerprint({
            "command": self.command,
            "seed": self.master_seed,
            "config": self.config_payload,
            "extra": self.extra,
        })

    def metadata(self) -> dict:
        """Lines prepended to every delimited output file."""
        return {"manifest": self.hash, "tool": f"tdqmc {__version__}"}

    def record(self, path: Path) -> Path:
        self.outputs.append(str(path))
        return path

    def write(self) -> Path:
        payload = {
            "manifest": self.hash,
            "command": self.command,
            "master_seed": self.master_seed,
            "config": self.config_payload,
            "extra": self.extra,
            "tool_version": __version__,
            "started": self.started,
            "finished": time.time(),
            "outputs": sorted(self.outputs),
        }
        path = Path(self.out_dir) / "manifest.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path
