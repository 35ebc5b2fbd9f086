import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlslab.grid import (CartesianGrid, Field, GridMismatchError, L2Ball, RadialGrid, from_spectral,
                         gradient, gradient_norm_sq, inner, laplacian, norm, real_inner, to_spectral,
                         value_at_origin)
from nlslab.validation import random_field

RG = RadialGrid(2047, 40.0)
SMALL = RadialGrid(63, 20.0)
CG = CartesianGrid(32, 24.0)


def gauss(grid, a=1.0):
    return Field.from_function(grid, lambda r: np.exp(-a * r**2)) if grid.kind == "radial" else \
        Field(grid, np.exp(-a * grid.radius**2))


def test_inner_of_gaussians_matches_closed_form():
    val = inner(gauss(RG, 0.5), gauss(RG, 1.0))
    exact = (2 * np.pi / 3) ** 1.5
    assert abs(val - exact) / exact <= 1e-8


def test_inner_with_i_times_self_is_imaginary(rng):
    a = random_field(RG, rng)
    val = inner(a, a * 1j)
    assert abs(val.real) <= 1e-14 * norm(a) ** 2
    assert val.imag == pytest.approx(norm(a) ** 2, rel=1e-13)


def test_real_inner_of_rotated_real_field():
    a = gauss(RG) * (1 / norm(gauss(RG)))
    assert abs(real_inner(a * 1j, a)) <= 1e-15
    assert real_inner(a * 1j, a * 1j) == pytest.approx(1.0, rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_real_inner_symmetric_and_inner_conjugate_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b = random_field(SMALL, r), random_field(SMALL, r)
    assert real_inner(a, b) == pytest.approx(real_inner(b, a), rel=1e-13, abs=1e-13)
    assert inner(a, b) == pytest.approx(np.conj(inner(b, a)), rel=1e-13, abs=1e-13)


def test_gaussian_norms_match_closed_forms():
    g = gauss(RG, 0.5)
    assert norm(g, "L6") == pytest.approx((np.pi / 3) ** 0.25, rel=1e-6)
    assert norm(g) == pytest.approx(np.pi**0.75, rel=1e-10)
    # |grad e^{-r^2/2}|^2 = r^2 e^{-r^2}, integral (3/2) pi^{3/2}
    assert gradient_norm_sq(g) == pytest.approx(1.5 * np.pi**1.5, rel=1e-10)
    assert norm(g, "H1") == pytest.approx(np.sqrt(2.5 * np.pi**1.5), rel=1e-10)
    assert norm(g, L2Ball(39.0)) == pytest.approx(norm(g), rel=1e-12)
    assert value_at_origin(g) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("kind", ["L2", "L6", "H1", "W16", "L62"])
def test_norm_of_zero(kind):
    assert norm(Field.zeros(RG), kind) == 0.0
    assert norm(Field.zeros(CG), kind) == 0.0


def test_lowest_sine_mode_is_discrete_eigenfunction():
    f = Field.from_function(RG, lambda r: np.sin(np.pi * r / RG.r_max) / r)
    lap = laplacian(f)
    err = norm(lap + f * (np.pi / RG.r_max) ** 2) / norm(f * (np.pi / RG.r_max) ** 2)
    assert err <= 1e-8


def test_laplacian_of_gaussian_radial_and_cartesian():
    for grid, tol in ((RG, 1e-10), (CartesianGrid(64, 16.0), 1e-12)):
        g = gauss(grid)
        exact = Field(grid, (4 * grid.radius**2 - 6) * g.values)
        assert norm(laplacian(g) - exact) / norm(exact) <= tol


def test_laplacian_of_constant_on_box_vanishes():
    c = Field(CG, np.full(CG.shape, 2.5))
    assert np.abs(laplacian(c).values).max() <= 1e-12


@pytest.mark.parametrize("grid", [SMALL, CartesianGrid(16, 12.0)], ids=["radial", "cartesian"])
def test_laplacian_self_adjoint(grid, rng):
    a, b = random_field(grid, rng), random_field(grid, rng)
    lhs, rhs = real_inner(laplacian(a), b), real_inner(a, laplacian(b))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_spectral_roundtrip_and_parseval(seed):
    r = np.random.default_rng(seed)
    for grid in (SMALL, CartesianGrid(8, 6.0)):
        c = r.standard_normal(grid.shape) + 1j * r.standard_normal(grid.shape)
        f = from_spectral(grid, c)
        assert np.allclose(to_spectral(f), c, atol=1e-12)
        assert norm(f) == pytest.approx(np.linalg.norm(c), rel=1e-12)


def test_radial_gradient_of_gaussian():
    g = gauss(RG, 0.5)
    assert np.allclose(gradient(g).real, -RG.r * np.exp(-RG.r**2 / 2), atol=1e-10)


def test_cartesian_gradient_of_gaussian():
    grid = CartesianGrid(64, 20.0)
    g = gauss(grid, 0.5)
    x, _, _ = grid.coords
    assert np.allclose(gradient(g)[0].real, -x * g.values.real, atol=1e-9)


def test_fields_are_immutable_and_grid_checked():
    f = gauss(SMALL)
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    with pytest.raises(AttributeError):
        f.grid = RG
    with pytest.raises(GridMismatchError):
        _ = f + gauss(RadialGrid(63, 21.0))
    with pytest.raises(ValueError):
        Field(SMALL, np.zeros(5))


def test_grid_validation():
    with pytest.raises(ValueError):
        CartesianGrid(30, 10.0)
    with pytest.raises(ValueError):
        RadialGrid(2, 10.0)
