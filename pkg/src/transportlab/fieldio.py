"""Snapshot and time-series files.

A field dump is a flat ``<f8`` (little-endian float64) row-major array, one
block per component, next to a JSON sidecar ``<name>.bin.json`` holding the
grid, time stamp, config hash and component count.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import Grid, ScalarField, VelocityField
from .solver import STEP_FIELDS, DiagnosticsSeries

__all__ = ["write_field", "read_field", "sidecar_path", "write_step_csv"]

DTYPE = "<f8"


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_field(path, field: ScalarField | VelocityField, time: float = 0.0, config_hash: str | None = None) -> Path:
    """Write ``field`` and its sidecar; returns the sidecar path."""
    if isinstance(field, VelocityField):
        blocks = field.components
        kind = "velocity"
    else:
        blocks = (field.values,)
        kind = "scalar"
    grid = field.grid
    data = np.concatenate([np.ascontiguousarray(b, dtype=DTYPE).ravel() for b in blocks])
    Path(path).write_bytes(data.tobytes())
    meta = {
        "kind": kind,
        "components": len(blocks),
        "grid": {"dim": grid.dim, "n_per_axis": grid.n_per_axis, "length": grid.length},
        "time": float(time),
        "config_hash": config_hash,
        "dtype": DTYPE,
        "order": "C",
    }
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def read_field(path) -> tuple[ScalarField | VelocityField, dict]:
    """Inverse of :func:`write_field`; the sidecar must sit next to ``path``."""
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except FileNotFoundError:
        raise ConfigError(f"missing sidecar {side}", "sidecar") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed sidecar {side}: {exc.msg}", "sidecar") from None
    try:
        g = meta["grid"]
        grid = Grid(int(g["dim"]), int(g["n_per_axis"]), float(g["length"]))
        ncomp = int(meta["components"])
    except KeyError as exc:
        raise ConfigError(f"sidecar lacks {exc.args[0]!r}", str(exc.args[0])) from None
    try:
        raw = np.fromfile(path, dtype=DTYPE)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if raw.size != ncomp * grid.n_points:
        raise ConfigError(
            f"{path} holds {raw.size} values, sidecar expects {ncomp} x {grid.n_points}", "components"
        )
    blocks = [b.reshape(grid.shape) for b in np.split(raw.astype(float), ncomp)]
    if meta.get("kind") == "velocity":
        return VelocityField(grid, tuple(blocks)), meta
    if ncomp != 1:
        raise ConfigError("scalar field with more than one component", "components")
    return ScalarField(grid, blocks[0]), meta


def write_step_csv(series: DiagnosticsSeries, path) -> None:
    """One row per accepted step, columns as the :class:`StepReport` fields."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_FIELDS)
        for s in series.steps:
            w.writerow([repr(float(getattr(s, k))) for k in STEP_FIELDS])
