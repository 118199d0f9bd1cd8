"""Deterministic output writers: decimal floats with 17 significant digits.

Every artifact starts with comment lines carrying the schema version and the
configuration digest, so outputs are traceable and byte-comparable.
"""

from __future__ import annotations

import json
import os

import numpy as np

__all__ = ["fmt", "write_csv", "write_json", "ensure_dir"]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)


def write_csv(path, columns, rows, digest: str = None) -> None:
    lines = [f"# schema_version=1"]
    if digest is not None:
        lines.append(f"# config_digest={digest}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
