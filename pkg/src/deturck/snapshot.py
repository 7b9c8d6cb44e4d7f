"""Binary snapshot format for tensor fields (magic "RDTF", version 1).

Layout, all little-endian:
    4 bytes  magic "RDTF"
    u32      version (= 1)
    u32      n
    u32      resolution
    f64      box_length
    f64      time
    u32      component_count
    f64[...] component_count * resolution^n values,
             components in lexicographic (i <= j) order, grid points row-major

Round trips are bit-exact: write(read(file)) == file.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import SnapshotFormatError
from .grid import GridSpec, SymTensorField

MAGIC = b"RDTF"
VERSION = 1
_HEADER = struct.Struct("<4sIII d d I")


def write_snapshot(path, field: SymTensorField, time: float) -> None:
    g = field.grid
    ncomp = g.sym_components
    header = _HEADER.pack(MAGIC, VERSION, g.n, g.resolution, g.box_length, float(time), ncomp)
    data = np.ascontiguousarray(field.values, dtype="<f8")
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes(order="C"))


def read_snapshot(path):
    """Returns (SymTensorField, time)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise SnapshotFormatError(f"truncated snapshot {path}: {len(raw)} bytes")
    magic, version, n, resolution, box_length, time, ncomp = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r} in {path}")
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported version {version} in {path}")
    try:
        grid = GridSpec(n=n, resolution=resolution, box_length=box_length)
    except ValueError as exc:
        raise SnapshotFormatError(f"invalid grid header in {path}: {exc}") from exc
    if ncomp != grid.sym_components:
        raise SnapshotFormatError(
            f"component count {ncomp} != {grid.sym_components} for n={n} in {path}"
        )
    expected = _HEADER.size + 8 * ncomp * grid.npoints
    if len(raw) != expected:
        raise SnapshotFormatError(
            f"truncated snapshot {path}: expected {expected} bytes, got {len(raw)}"
        )
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(
        (ncomp,) + grid.shape
    )
    return SymTensorField(grid, values.astype(float)), time
