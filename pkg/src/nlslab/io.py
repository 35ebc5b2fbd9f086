"""Binary field files and JSON sidecars.

Layout of ``<name>.bin`` (all little-endian)::

    offset  size  content
    0       4     magic b"NLSF"
    4       1     format version (1)
    5       1     kind tag: 0 = radial, 1 = cartesian
    6       2     reserved, zero
    8       8     n (uint64)
    16      8     r_max or box (float64)
    24      8     number of complex values (uint64)
    32      ...   interleaved (re, im) float64 pairs

``<name>.json`` carries the same header in readable form plus free metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .grid import CartesianGrid, Field, RadialGrid

MAGIC = b"NLSF"
VERSION = 1
_HEADER = struct.Struct("<4sBB2xQdQ")
_KIND_TAGS = {"radial": 0, "cartesian": 1}


class FieldFormatError(ValueError):
    pass


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".bin", ".json"):
        p = p.with_suffix("")
    return p.with_suffix(".bin"), p.with_suffix(".json")


def grid_to_dict(grid) -> dict:
    if grid.kind == "radial":
        return {"kind": "radial", "n": grid.n, "r_max": grid.r_max}
    return {"kind": "cartesian", "n": grid.n, "box": grid.box}


def grid_from_dict(d: dict):
    if d["kind"] == "radial":
        return RadialGrid(int(d["n"]), float(d["r_max"]))
    if d["kind"] == "cartesian":
        return CartesianGrid(int(d["n"]), float(d["box"]))
    raise FieldFormatError(f"unknown grid kind {d['kind']!r}")


def field_to_bytes(field: Field) -> bytes:
    g = field.grid
    extent = g.r_max if g.kind == "radial" else g.box
    values = np.ascontiguousarray(field.values.ravel(), dtype="<c16")
    header = _HEADER.pack(MAGIC, VERSION, _KIND_TAGS[g.kind], g.n, extent, values.size)
    return header + values.view("<f8").tobytes()


def field_from_bytes(data: bytes) -> Field:
    if len(data) < _HEADER.size:
        raise FieldFormatError("truncated header")
    magic, version, tag, n, extent, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FieldFormatError("bad magic")
    if version != VERSION:
        raise FieldFormatError(f"unsupported version {version}")
    if tag == 0:
        grid = RadialGrid(n, extent)
    elif tag == 1:
        grid = CartesianGrid(n, extent)
    else:
        raise FieldFormatError(f"unknown kind tag {tag}")
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if payload.size != 2 * count or count != int(np.prod(grid.shape)):
        raise FieldFormatError("payload size does not match header")
    values = payload.view("<c16").reshape(grid.shape)
    return Field(grid, values)


def write_field(path, field: Field, metadata: dict | None = None) -> Path:
    """Write ``field`` to ``path.bin`` with a ``path.json`` sidecar."""
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(field_to_bytes(field))
    sidecar = {"grid": grid_to_dict(field.grid), "dtype": "complex128-le-interleaved",
               "metadata": metadata or {}}
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return bin_path


def read_field(path) -> Field:
    bin_path, _ = _paths(path)
    return field_from_bytes(bin_path.read_bytes())


def read_sidecar(path) -> dict:
    _, json_path = _paths(path)
    return json.loads(json_path.read_text())
