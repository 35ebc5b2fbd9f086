"""Best decomposition psi = Q[z] + eta with eta symplectically orthogonal to the tangent space.

The continuous subspace at z is Hc[z] = {eta : <i eta, D_j Q[z]> = 0, j = 1, 2},
where D_1, D_2 are partials in Re z and Im z and <a, b> = Re(a, b).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundstate import BoundStateFamily, D2Q_of_z, OutOfFamilyError, Q_of_z, tangent_vectors
from .grid import Field, inner, norm, real_inner
from .linear import LinearModel
from .nonlin import F2_eval, NonlinearitySpec, linearize_g

__all__ = [
    "ModulationState",
    "DecompositionError",
    "SingularSystemError",
    "decompose",
    "constraint_values",
    "jacobian",
    "hc_project",
    "R_apply",
    "modulation_matrix",
    "modulation_velocity",
    "fixed_decomposition_term",
]

EPS_FLOOR = 1e-14


class DecompositionError(RuntimeError):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ModulationState:
    z: complex
    eta: Field
    hc_residual: float
    newton_iters: int

    @property
    def hc_tolerance(self) -> float:
        return 1e-10 * (norm(self.eta) + abs(self.z) + EPS_FLOOR)


def _i(f: Field) -> Field:
    return f * 1j


def _solve2(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    if abs(np.linalg.det(M)) < 1e-14 * max(np.abs(M).max() ** 2, 1e-300):
        raise SingularSystemError("2x2 system is singular; z is outside the family's validity range")
    return np.linalg.solve(M, b)


def constraint_values(family: BoundStateFamily, psi: Field, z: complex) -> np.ndarray:
    """A_j(z) = <i(psi - Q[z]), D_j Q[z]>."""
    r = _i(psi - Q_of_z(family, z))
    D = tangent_vectors(family, z)
    return np.array([real_inner(r, D[0]), real_inner(r, D[1])])


def _second_derivs(family, z):
    units = (1.0, 1j)
    D2 = [[None, None], [None, None]]
    for j in range(2):
        for k in range(j, 2):
            d = D2Q_of_z(family, z, units[j], units[k])
            if j != k:
                # symmetrize the mixed derivative
                d = 0.5 * (d + D2Q_of_z(family, z, units[k], units[j]))
            D2[j][k] = D2[k][j] = d
    return D2


def jacobian(family: BoundStateFamily, psi: Field, z: complex) -> np.ndarray:
    """DA[j, k] = D_j A_k = <-i D_j Q, D_k Q> + <i(psi - Q), D_j D_k Q>."""
    D = tangent_vectors(family, z)
    D2 = _second_derivs(family, z)
    r = _i(psi - Q_of_z(family, z))
    J = np.empty((2, 2))
    for j in range(2):
        for k in range(2):
            J[j, k] = real_inner(_i(D[j]) * -1, D[k]) + real_inner(r, D2[j][k])
    return J


def decompose(family: BoundStateFamily, psi: Field, z0: complex | None = None, tol: float = 1e-12,
              max_iter: int = 25) -> ModulationState:
    """Newton on A(z) = 0 starting from z0 = (phi0, psi), damped when |A| grows."""
    phi0 = family.model.phi0
    z = complex(inner(phi0, psi)) if z0 is None else complex(z0)
    if abs(z) > family.m_max:
        raise OutOfFamilyError(f"initial guess |z| = {abs(z):.4g} exceeds m_max = {family.m_max:.4g}")
    A = constraint_values(family, psi, z)
    res = float(np.abs(A).max())
    it = 0
    while res > tol:
        if it >= max_iter:
            raise DecompositionError(f"Newton did not converge in {max_iter} steps (|A| = {res:.3g})")
        it += 1
        J = jacobian(family, psi, z)
        d = _solve2(J.T, -A)
        step = 1.0
        while True:
            zn = z + step * complex(d[0], d[1])
            if abs(zn) > family.m_max:
                step *= 0.5
                if step < 1e-6:
                    raise OutOfFamilyError("decomposition left the family range")
                continue
            An = constraint_values(family, psi, zn)
            rn = float(np.abs(An).max())
            if rn <= res or step < 1e-3:
                break
            step *= 0.5
        z, A, res = zn, An, rn
    eta = psi - Q_of_z(family, z)
    return ModulationState(z=z, eta=eta, hc_residual=res, newton_iters=it)


def hc_project(family: BoundStateFamily, z: complex, eta: Field) -> Field:
    """Orthogonal projection (real inner product) of eta onto Hc[z]."""
    D = tangent_vectors(family, z)
    W = [_i(d) for d in D]
    G = np.array([[real_inner(W[j], W[k]) for k in range(2)] for j in range(2)])
    b = np.array([real_inner(W[j], eta) for j in range(2)])
    c = _solve2(G, b)
    return eta - W[0] * c[0] - W[1] * c[1]


def R_apply(family: BoundStateFamily, model: LinearModel, z: complex, eta_c: Field,
            tol: float = 1e-8) -> Field:
    """Map eta_c in Hc[0] to eta_c + phi0 alpha in Hc[z]; P_c of the result is eta_c."""
    phi0 = model.phi0
    lead = abs(inner(phi0, eta_c))
    if lead > tol * max(norm(eta_c), 1.0):
        raise ValueError(f"input is not orthogonal to phi0 ((phi0, eta) = {lead:.3g})")
    D = tangent_vectors(family, z)
    # unknown alpha = a + i b enters as i*phi0*a - phi0*b in <i(eta + phi0 alpha), D_j Q> = 0
    cols = (_i(phi0), -phi0)
    M = np.array([[real_inner(cols[k], D[j]) for k in range(2)] for j in range(2)])
    rhs = -np.array([real_inner(_i(eta_c), D[j]) for j in range(2)])
    a, b = _solve2(M, rhs)
    return eta_c + phi0 * complex(a, b)


def modulation_matrix(family: BoundStateFamily, z: complex, eta: Field) -> np.ndarray:
    """M[j, k] = <i D_j Q, D_k Q> + <i eta, D_j D_k Q>."""
    D = tangent_vectors(family, z)
    D2 = _second_derivs(family, z)
    ie = _i(eta)
    return np.array([[real_inner(_i(D[j]), D[k]) + real_inner(ie, D2[j][k]) for k in range(2)]
                     for j in range(2)])


def modulation_velocity(family: BoundStateFamily, model: LinearModel, spec: NonlinearitySpec,
                        z: complex, eta: Field) -> complex:
    """v = dz/dt + i E[z] z from the modulation equations M v = -<F2(z, eta), D_j Q>."""
    Q = Q_of_z(family, z)
    F2 = F2_eval(spec, Q, eta)
    D = tangent_vectors(family, z)
    b = -np.array([real_inner(F2, D[0]), real_inner(F2, D[1])])
    if not np.any(b):
        return 0j
    v = _solve2(modulation_matrix(family, z, eta), b)
    return complex(v[0], v[1])


def fixed_decomposition_term(family: BoundStateFamily, model: LinearModel, spec: NonlinearitySpec,
                             z: complex, eta: Field) -> dict:
    """Diagnostic for the alternative split with (eta, phi0) = 0.

    With that split the parameter equation carries the term (phi0, dg(Q)eta)
    that is linear in eta; its size is logged against the quadratic F2 term.
    """
    Q = Q_of_z(family, z)
    phi0 = model.phi0
    linear = abs(inner(phi0, linearize_g(spec, Q, eta)))
    quadratic = abs(inner(phi0, F2_eval(spec, Q, eta)))
    return {"linear_term": linear, "quadratic_term": quadratic}
