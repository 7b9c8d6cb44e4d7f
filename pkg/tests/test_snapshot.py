import struct

import numpy as np
import pytest

from deturck.errors import SnapshotFormatError
from deturck.grid import GridSpec, SymTensorField
from deturck.snapshot import read_snapshot, write_snapshot

from conftest import random_bandlimited_sym


def test_roundtrip_byte_identical(tmp_path, rng):
    g = GridSpec(3, 8, 2.5)
    h = random_bandlimited_sym(g, 2, rng, amplitude=0.3)
    p1 = tmp_path / "a.rdtf"
    p2 = tmp_path / "b.rdtf"
    write_snapshot(p1, h, time=0.125)
    field, t = read_snapshot(p1)
    assert t == 0.125
    write_snapshot(p2, field, time=t)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout(tmp_path):
    g = GridSpec(2, 8, 1.0)
    write_snapshot(tmp_path / "h.rdtf", SymTensorField.zero(g), time=0.0)
    raw = (tmp_path / "h.rdtf").read_bytes()
    assert raw[:4] == b"RDTF"
    version, n, res = struct.unpack_from("<III", raw, 4)
    assert (version, n, res) == (1, 2, 8)
    box, t = struct.unpack_from("<dd", raw, 16)
    assert (box, t) == (1.0, 0.0)
    (ncomp,) = struct.unpack_from("<I", raw, 32)
    assert ncomp == 3
    assert len(raw) == 36 + 8 * 3 * 64


def test_truncated_rejected(tmp_path):
    g = GridSpec(2, 8, 1.0)
    p = tmp_path / "t.rdtf"
    write_snapshot(p, SymTensorField.zero(g), time=0.0)
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(SnapshotFormatError, match="truncated"):
        read_snapshot(p)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "m.rdtf"
    p.write_bytes(b"NOPE" + b"\x00" * 100)
    with pytest.raises(SnapshotFormatError, match="magic"):
        read_snapshot(p)


def test_future_version_rejected(tmp_path):
    g = GridSpec(2, 8, 1.0)
    p = tmp_path / "v.rdtf"
    write_snapshot(p, SymTensorField.zero(g), time=0.0)
    raw = bytearray(p.read_bytes())
    struct.pack_into("<I", raw, 4, 2)
    p.write_bytes(bytes(raw))
    with pytest.raises(SnapshotFormatError, match="unsupported version"):
        read_snapshot(p)


def test_reload_satisfies_field_invariants(tmp_path, rng):
    g = GridSpec(2, 16, 3.0)
    h = random_bandlimited_sym(g, 3, rng, amplitude=0.2)
    p = tmp_path / "r.rdtf"
    write_snapshot(p, h, time=1.0)
    field, _ = read_snapshot(p)
    assert field.grid == g
    assert np.array_equal(field.values, h.values)
