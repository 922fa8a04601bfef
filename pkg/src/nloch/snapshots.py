"""Binary field snapshots (NLF1) and trajectory directories.

A single snapshot is a little-endian header

    magic "NLF1" | u32 nx | u32 ny | f64 lx | f64 ly | f64 t

followed by nx*ny float64 values in row-major order (x index outer).  A
trajectory persists as a directory of snapshots named <role>_<index>.nlf1 at a
configurable stride plus a JSON manifest with the times, per-step diagnostics
and the configuration hash.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .grid import Field, Grid2D, Trajectory

__all__ = ["write_field", "read_field", "field_to_csv", "save_trajectory", "load_snapshots"]

_MAGIC = b"NLF1"
_HEADER = struct.Struct("<4sIIddd")


def write_field(path, u: Field, t: float = 0.0) -> None:
    grid = u.grid
    header = _HEADER.pack(_MAGIC, grid.nx, grid.ny, grid.lx, grid.ly, float(t))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(u.values.astype("<f8").tobytes(order="C"))


def read_field(path, grid: Grid2D | None = None) -> tuple[Field, float]:
    """Read a snapshot; returns (field, time).

    If a grid is given it must match the stored spatial layout (its time
    metadata is reused so fields stay composable with an existing config).
    """
    with open(path, "rb") as fh:
        magic, nx, ny, lx, ly, t = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ShapeMismatch(f"{path}: not an NLF1 snapshot")
        data = np.frombuffer(fh.read(8 * nx * ny), dtype="<f8").reshape(nx, ny)
    if grid is None:
        grid = Grid2D(nx=nx, ny=ny, lx=lx, ly=ly, dt=1.0, nt=1)
    elif (grid.nx, grid.ny) != (nx, ny):
        raise ShapeMismatch(
            f"{path}: stored grid {nx}x{ny} does not match the expected {grid.nx}x{grid.ny}"
        )
    return Field(grid, np.array(data)), t


def field_to_csv(path, u: Field) -> None:
    """Plain x,y,value export (17 significant digits, RFC-4180 line endings)."""
    X, Y = u.grid.cell_centers()
    with open(path, "w", newline="") as fh:
        fh.write("x,y,value\r\n")
        for i in range(u.grid.nx):
            for j in range(u.grid.ny):
                fh.write(f"{X[i, j]:.17g},{Y[i, j]:.17g},{u.values[i, j]:.17g}\r\n")


def save_trajectory(
    outdir,
    traj: Trajectory,
    stride: int = 1,
    config_hash: str = "",
    extra: dict | None = None,
) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    indices = list(range(0, traj.nt + 1, max(stride, 1)))
    if indices[-1] != traj.nt:
        indices.append(traj.nt)
    for role in traj.roles:
        for n in indices:
            write_field(outdir / f"{role}_{n:06d}.nlf1", traj.component_at(role, n), traj.times[n])
    manifest = {
        "format": "NLF1-dir",
        "roles": list(traj.roles),
        "times": [float(t) for t in traj.times],
        "stored_indices": indices,
        "stride": stride,
        "config_hash": config_hash,
        "diagnostics": traj.diagnostics,
    }
    if extra:
        manifest.update(extra)
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return outdir


def load_snapshots(outdir, role: str, grid: Grid2D | None = None):
    """All stored snapshots of one role, ordered by index: (times, values)."""
    outdir = Path(outdir)
    paths = sorted(outdir.glob(f"{role}_*.nlf1"))
    fields = []
    times = []
    for p in paths:
        f, t = read_field(p, grid)
        fields.append(f.values)
        times.append(t)
    return np.array(times), np.array(fields)
