"""Deterministic JSON and CSV writers for run artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

SCHEMA = "ifs-ergodic/1"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        # JSON has no NaN or infinity
        return v if math.isfinite(v) else None
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps(record: dict) -> str:
    body = {"schema": SCHEMA, **_plain(record)}
    return json.dumps(body, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, record: dict) -> Path:
    path = Path(path)
    path.write_text(dumps(record), encoding="utf-8", newline="\n")
    return path


def write_csv(path, rows) -> Path:
    """``rows`` is an iterable whose first item is the header."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in rows:
            w.writerow(row)
    return path


def config_hash(config: dict) -> str:
    blob = json.dumps(_plain(config), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
