"""Binary field export: flat little-endian float64 in row-major order plus a
JSON sidecar with grid, time and config hash."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .field import Field, GridSpec


def canonical_hash(payload) -> str:
    """sha256 of the canonical JSON form of payload."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_plain)
    return hashlib.sha256(text.encode()).hexdigest()


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def grid_dict(grid: GridSpec) -> dict:
    return {"dim": grid.dim, "half_width": grid.half_width, "points_per_axis": grid.points_per_axis}


def export_field(field: Field, stem: Path, time: float, config_hash: str) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data = stem.with_suffix(".bin")
    meta = stem.with_suffix(".json")
    np.ascontiguousarray(field.values, dtype="<f8").tofile(data)
    record = {"grid": grid_dict(field.grid), "time": time, "config_hash": config_hash,
              "dtype": "<f8", "order": "C"}
    meta.write_text(json.dumps(record, indent=2, sort_keys=True))
    return data, meta


def load_field(stem: Path) -> tuple[Field, dict]:
    stem = Path(stem)
    record = json.loads(stem.with_suffix(".json").read_text())
    grid = GridSpec(**record["grid"])
    values = np.fromfile(stem.with_suffix(".bin"), dtype="<f8").reshape(grid.shape)
    return Field(grid, values), record


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
