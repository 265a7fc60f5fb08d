"""Result files: RFC-4180 CSV, stable-key JSON and two-column plot data.

Every file starts with the hash of the run configuration.  CSV and ``.dat``
files carry it as ``#`` comment lines; JSON files as a ``config_hash`` key.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration dictionary."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=_plain)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(obj):
    # JSON has no nan/inf; map them to null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path, payload: dict, digest: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = json.loads(json.dumps({"config_hash": digest, **payload}, default=_plain))
    path.write_text(json.dumps(_finite(body), sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, fieldnames: Sequence[str], rows: Iterable[Sequence], digest: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash: {digest}\r\n")
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(fieldnames)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_columns(path, x: Sequence[float], y: Sequence[float], digest: str, labels=("x", "y")) -> Path:
    """Whitespace-separated two-column data for plotting tools."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_hash: {digest}", f"# {labels[0]} {labels[1]}"]
    lines += [f"{float(a)!r} {float(b)!r}" for a, b in zip(x, y)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
