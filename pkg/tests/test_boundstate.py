import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlslab.boundstate import (D2Q_of_z, DE_of_z, DQ_of_z, E_of_z, H_apply, OutOfFamilyError,
                               Q_of_z, _fd_table, _hermite5, bordered_derivatives, decay_slope,
                               eq_residual, solve_point, tangent_vectors)
from nlslab.grid import Field, inner, laplacian, norm, real_inner
from nlslab.nonlin import g_apply
from nlslab.validation import random_field

phases = st.floats(0.0, 2 * np.pi)
moduli = st.floats(0.01, 0.35)


# -- interpolation and tables (oracles on polynomials) ------------------------------


def test_quintic_hermite_reproduces_quintics():
    m = np.linspace(0.0, 1.0, 7)
    c = np.array([0.3, -1.0, 2.0, 0.5, -0.7, 1.1])
    P = np.polynomial.Polynomial(c)
    f, df, d2f = P(m), P.deriv(1)(m), P.deriv(2)(m)
    for x in np.linspace(0, 1, 23):
        for nu in range(3):
            assert _hermite5(m, f, df, d2f, x, nu) == pytest.approx(P.deriv(nu)(x), abs=1e-11)


def test_fd_tables_are_fourth_order_with_parity():
    errs = []
    for n in (17, 33):
        m = np.linspace(0.0, 0.4, n)
        h = m[1] - m[0]
        odd, even = np.sin(3 * m), np.cos(3 * m)
        errs.append([np.abs(_fd_table(odd, h, 1, -1) - 3 * np.cos(3 * m)).max(),
                     np.abs(_fd_table(even, h, 1, 1) + 3 * np.sin(3 * m)).max(),
                     np.abs(_fd_table(odd, h, 2, -1) + 9 * np.sin(3 * m)).max()])
    orders = np.log2(np.array(errs[0]) / np.array(errs[1]))
    assert np.all(orders >= 3.5)


# -- family -------------------------------------------------------------------------


def test_origin_point_is_trivial(lab):
    pt = solve_point(lab.model, lab.spec, 0.0)
    assert norm(pt.Q) == 0.0 and pt.E == lab.model.e0


def test_every_family_point_solves_the_equation(lab):
    fam, model, spec = lab.family, lab.model, lab.spec
    assert len(fam.points) == 33 and fam.m_max == pytest.approx(0.4)
    for p in fam.points[1:]:
        # independent residual from module primitives
        res = -laplacian(p.Q).values + model.V * p.Q.values + g_apply(spec, p.Q).values - p.E * p.Q.values
        assert norm(Field(fam.grid, res)) <= 1e-8 * norm(p.Q)
        assert eq_residual(model, spec, p.Q, p.E) <= 1e-8 * norm(p.Q)
        assert abs(inner(model.phi0, p.q)) <= 1e-11
        assert inner(model.phi0, p.Q).real == pytest.approx(p.m, abs=1e-12)


def test_correction_is_little_o_of_m_squared(lab):
    pts = lab.family.points
    small = [p for p in pts[1:] if p.m <= lab.family.m_max / 4]
    ratios = [norm(p.q) / p.m**2 for p in small]
    assert np.all(np.diff(ratios) > 0)  # decreasing toward m = 0


def test_dE_small_and_vanishing_at_origin(lab):
    dE = lab.family.dE
    assert dE[0] == 0.0
    assert np.all(np.abs(dE[1:6]) <= 0.05)
    assert np.all(np.diff(np.abs(dE[:6])) > 0)


def test_interpolated_midpoints_match_fresh_solves(lab):
    fam = lab.family
    for i in (2, 9, 20, 30):
        m = 0.5 * (fam.m_grid[i] + fam.m_grid[i + 1])
        pt = solve_point(lab.model, lab.spec, m)
        assert abs(fam.E_real(m) - pt.E) <= 1e-6 * abs(pt.E)
        assert np.linalg.norm(fam.Q_real(m) - pt.Q.values.real) <= 1e-6 * np.linalg.norm(pt.Q.values)


def test_tables_match_bordered_derivatives(lab):
    fam = lab.family
    for i in (4, 16, 28):
        dQ, dE, d2Q, _ = bordered_derivatives(fam, fam.m_grid[i])
        assert np.linalg.norm(fam.dQ[i] - dQ.values.real) <= 1e-8 * np.linalg.norm(dQ.values)
        assert abs(fam.dE[i] - dE) <= 1e-6 * abs(dE)
        assert np.linalg.norm(fam.d2Q[i] - d2Q.values.real) <= 1e-5 * np.linalg.norm(d2Q.values)


def test_out_of_family_and_real_points(lab):
    fam = lab.family
    with pytest.raises(OutOfFamilyError):
        Q_of_z(fam, 0.41)
    p = fam.points[10]
    assert np.array_equal(Q_of_z(fam, p.m).values.real, fam.Q_table[10])
    assert E_of_z(fam, p.m * 1j) == pytest.approx(p.E, rel=1e-14)


def test_solitary_tail_decays_at_least_at_bound(lab):
    slope, bound = decay_slope(lab.family)
    assert slope <= bound < 0


# -- complex parametrization ---------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(moduli, phases)
def test_modulus_invariance_and_gauge_identity(lab, m, a):
    fam = lab.family
    z = m * np.exp(1j * a)
    Qz = Q_of_z(fam, z)
    assert norm(Qz) == pytest.approx(norm(Q_of_z(fam, m)), rel=1e-13)
    assert norm(DQ_of_z(fam, z, 1j * z) - Qz * 1j) <= 1e-8 * norm(Qz)


def test_derivative_at_origin_is_phi0(lab):
    fam = lab.family
    for w in (1.0, 1j, 0.3 - 0.8j):
        assert norm(DQ_of_z(fam, 0.0, w) - lab.model.phi0 * w) <= 1e-14
    assert np.all(DE_of_z(fam, 0.0) == 0)


@settings(max_examples=8, deadline=None)
@given(moduli, phases, phases)
def test_DQ_matches_finite_differences(lab, m, a, b):
    fam = lab.family
    z, w = m * np.exp(1j * a), np.exp(1j * b)
    exact = DQ_of_z(fam, z, w)
    errs = []
    for h in (2e-3, 1e-3):
        fd = (Q_of_z(fam, z + h * w) - Q_of_z(fam, z - h * w)) * (0.5 / h)
        errs.append(norm(fd - exact))
    assert errs[1] <= 1e-5 * norm(exact)
    assert errs[1] <= errs[0] / 3 or errs[1] <= 1e-10 * norm(exact)


def test_DE_matches_finite_differences(lab):
    fam = lab.family
    z, h = 0.2 * np.exp(0.6j), 1e-4
    fd = [(E_of_z(fam, z + h * w) - E_of_z(fam, z - h * w)) / (2 * h) for w in (1, 1j)]
    assert np.allclose(DE_of_z(fam, z), fd, rtol=1e-6, atol=1e-12)


def test_second_derivative_is_symmetric(lab):
    fam = lab.family
    z = 0.15 * np.exp(1.1j)
    a = D2Q_of_z(fam, z, 1.0, 1j)
    b = D2Q_of_z(fam, z, 1j, 1.0)
    assert norm(a - b) <= 1e-6 * norm(a)


# -- linearized operator -----------------------------------------------------------


def test_H_symmetric_for_real_inner(lab, rng):
    fam = lab.family
    for _ in range(20):
        z = rng.uniform(0, 0.35) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        a, b = random_field(fam.grid, rng), random_field(fam.grid, rng)
        lhs = real_inner(H_apply(fam, lab.model, lab.spec, z, a), b)
        rhs = real_inner(a, H_apply(fam, lab.model, lab.spec, z, b))
        assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1.0)


def test_H_at_origin_is_linear_operator(lab, rng):
    a = random_field(lab.grid, rng)
    assert norm(H_apply(lab.family, lab.model, lab.spec, 0.0, a) - lab.model.apply(a)) == 0.0


@pytest.mark.parametrize("z", [0.05, 0.2 * np.exp(0.4j), 0.35j])
def test_invariance_relation(lab, z):
    fam = lab.family
    E = E_of_z(fam, z)
    DE = DE_of_z(fam, z)
    Qz = Q_of_z(fam, z)
    for j, D in enumerate(tangent_vectors(fam, z)):
        res = H_apply(fam, lab.model, lab.spec, z, D) - D * E - Qz * DE[j]
        assert norm(res) <= 1e-6 * norm(D)
