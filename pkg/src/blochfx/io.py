"""CSV and JSON manifest writers shared by the CLI."""
from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, header, rows) -> Path:
    """Write rows (sequences or dicts keyed by ``header``) with a header
    line.  Floats use ``repr`` so values round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row[h] for h in header]
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class RunManifest:
    """Provenance record written next to every set of outputs."""

    command: str
    spec: dict
    spec_hash: str
    parameters: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def finish(self):
        self.wall_time = time.perf_counter() - self._t0

    def to_dict(self) -> dict:
        from . import __version__
        from .kernels import BACKEND

        return _jsonable({
            "command": self.command,
            "spec_hash": self.spec_hash,
            "version": __version__,
            "backend": BACKEND,
            "python": platform.python_version(),
            "parameters": self.parameters,
            "spec": self.spec,
            "results": self.results,
            "outputs": sorted(self.outputs),
            "wall_time": self.wall_time,
        })

    def write(self, directory) -> Path:
        path = Path(directory) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path
