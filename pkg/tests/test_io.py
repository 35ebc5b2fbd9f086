import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlslab.grid import CartesianGrid, Field, RadialGrid
from nlslab.io import (FieldFormatError, field_from_bytes, field_to_bytes, grid_from_dict,
                       grid_to_dict, read_field, read_sidecar, write_field)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 64), st.floats(1.0, 100.0), st.integers(0, 2**32 - 1))
def test_radial_roundtrip_is_bit_exact(n, r_max, seed):
    r = np.random.default_rng(seed)
    f = Field(RadialGrid(n, r_max), r.standard_normal(n) + 1j * r.standard_normal(n))
    g = field_from_bytes(field_to_bytes(f))
    assert g.grid == f.grid
    assert np.array_equal(g.values, f.values)


def test_cartesian_file_roundtrip_with_sidecar(tmp_path, rng):
    grid = CartesianGrid(8, 5.0)
    f = Field(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    path = write_field(tmp_path / "sub" / "psi", f, {"t": 2.5})
    assert path.suffix == ".bin"
    assert np.array_equal(read_field(tmp_path / "sub" / "psi.bin").values, f.values)
    side = read_sidecar(tmp_path / "sub" / "psi")
    assert side["metadata"] == {"t": 2.5}
    assert grid_from_dict(side["grid"]) == grid


def test_header_layout():
    f = Field(RadialGrid(4, 2.0), [1, 2j, 3, 4])
    data = field_to_bytes(f)
    assert data[:4] == b"NLSF"
    assert len(data) == 32 + 4 * 16


@pytest.mark.parametrize("mutate", ["magic", "version", "truncate", "kind", "payload"])
def test_corrupt_files_are_rejected(mutate):
    data = bytearray(field_to_bytes(Field(RadialGrid(4, 2.0), np.arange(4.0))))
    if mutate == "magic":
        data[0:4] = b"XXXX"
    elif mutate == "version":
        data[4] = 9
    elif mutate == "kind":
        data[5] = 7
    elif mutate == "truncate":
        data = data[:10]
    else:
        data = data[:-16]
    with pytest.raises(FieldFormatError):
        field_from_bytes(bytes(data))


def test_grid_dict_roundtrip_and_unknown_kind():
    for grid in (RadialGrid(31, 10.0), CartesianGrid(16, 8.0)):
        assert grid_from_dict(grid_to_dict(grid)) == grid
    with pytest.raises(FieldFormatError):
        grid_from_dict({"kind": "polar"})
