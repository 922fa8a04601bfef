"""Deterministic CSV tables and run manifests.

All floating-point output is formatted with 17 significant digits and CSV
rows are RFC-4180 (comma separated, CRLF, mandatory header), so identical
configurations and seeds produce byte-identical artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

__all__ = ["format_value", "write_csv", "write_manifest", "config_hash"]


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header: list, rows: list) -> None:
    """rows: sequences or dicts keyed by the header names."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(k, "") for k in header]
            writer.writerow([format_value(v) for v in row])


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def write_manifest(outdir, payload: dict) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=_jsonable)
    return path


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)!r}")
