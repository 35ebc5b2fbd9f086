"""The small nonlinear bound-state family Q[z], E[z].

Each point solves (-Delta + V) Q + g(Q) = E Q with Q = m*phi0 + q, q orthogonal
to phi0, by the contraction

    g0  = g(m phi0 + q0)
    e'1 = (phi0, g0) / m
    q1  = T^{-1}(-P_c g0 + e'0 q0),        T = -Delta + V - e0 on the phi0 complement,

with E = e0 + e'.  The family is tabulated in m = |z| and extended to complex
z by gauge rotation, Q[m e^{i theta}] = Q[m] e^{i theta}.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.optimize as sopt

from .grid import Field, inner, norm, real_inner
from .linear import LinearModel, _from_radial_coords, _radial_coords, project_c
from .nonlin import NonlinearitySpec, g_apply, linearize_g, second_variation

log = logging.getLogger(__name__)

__all__ = [
    "BoundStatePoint",
    "BoundStateFamily",
    "OutOfFamilyError",
    "FamilyConstructionError",
    "solve_point",
    "build_family",
    "eq_residual",
    "Q_of_z",
    "E_of_z",
    "DE_of_z",
    "DQ_of_z",
    "D2Q_of_z",
    "H_apply",
    "bordered_derivatives",
    "decay_slope",
]


class OutOfFamilyError(ValueError):
    """|z| beyond the range where the family was constructed."""


class FamilyConstructionError(RuntimeError):
    pass


@dataclass
class BoundStatePoint:
    m: float
    E: float
    Q: Field
    q: Field
    eig_residual: float
    orth_residual: float
    iterations: int = 0
    method: str = "contraction"


def eq_residual(model: LinearModel, spec: NonlinearitySpec, Q: Field, E: float) -> float:
    """||(-Delta + V) Q + g(Q) - E Q||_2 assembled from the primitives."""
    r = model.apply(Q) + g_apply(spec, Q) - E * Q
    return norm(r)


def _real(f: Field) -> Field:
    return Field(f.grid, f.values.real)


def _h1_norm(f: Field) -> float:
    return norm(f, "H1")


def _finish(model, spec, m, q, ep, iters, method) -> BoundStatePoint:
    q = _real(project_c(model, q))
    Q = Field(model.grid, m * model.phi0.values.real + q.values.real)
    E = model.e0 + ep
    return BoundStatePoint(m=m, E=E, Q=Q, q=q, eig_residual=eq_residual(model, spec, Q, E),
                           orth_residual=abs(inner(model.phi0, q)), iterations=iters, method=method)


def _contraction(model, spec, m, q0, ep0, tol, max_iter):
    phi0 = _real(model.phi0)
    q, ep = q0, ep0
    for it in range(1, max_iter + 1):
        g0 = _real(g_apply(spec, m * phi0 + q))
        ep1 = real_inner(phi0, g0) / m
        q1 = _real(model.solve_T(-g0 + ep * q))
        step = _h1_norm(q1 - q) + abs(ep1 - ep)
        q, ep = q1, ep1
        if not np.isfinite(step):
            return None, None, it
        if step <= tol:
            return q, ep, it
    return None, None, max_iter


def _newton_radial(model, spec, m, q0, ep0, tol, max_iter=50):
    """Newton on the joint residual with phi0-orthogonality as a bordered constraint."""
    g = model.grid
    n = g.n
    Hm = model.matrix
    p = model.phi0_coords
    x = _radial_coords(q0).real
    ep = ep0
    for it in range(1, max_iter + 1):
        q = _from_radial_coords(g, x)
        Q = m * _real(model.phi0) + _real(q)
        gq = _radial_coords(g_apply(spec, Q)).real
        dg = linearize_g(spec, Q, Field(g, np.ones(n))).values.real
        r1 = Hm @ x - (model.e0 + ep) * x + gq - p * (p @ gq)
        r2 = m * ep - p @ gq
        if np.linalg.norm(r1) + abs(r2) <= tol * max(m, 1e-300):
            return _from_radial_coords(g, x), ep, it
        J = np.zeros((n + 2, n + 2))
        J[:n, :n] = Hm - (model.e0 + ep) * np.eye(n) + dg[None, :] * np.eye(n) \
            - np.outer(p, p * dg)
        J[:n, n] = -x
        J[:n, n + 1] = p
        J[n, :n] = -(p * dg)
        J[n, n] = m
        J[n + 1, :n] = p
        rhs = -np.concatenate([r1, [r2, p @ x]])
        d = np.linalg.solve(J, rhs)
        x = x + d[:n]
        ep = ep + d[n]
        if not np.all(np.isfinite(x)):
            break
    return None, None, max_iter


def _newton_krylov(model, spec, m, q0, ep0, tol, max_iter=50):
    g = model.grid
    shape = g.shape
    size = int(np.prod(shape))
    phi0 = _real(model.phi0)

    def F(y):
        q = Field(g, y[:size].reshape(shape))
        ep = y[size]
        Q = m * phi0 + q
        gq = _real(g_apply(spec, Q))
        r1 = model.apply(q) - (model.e0 + ep) * q + project_c(model, gq) \
            + phi0 * real_inner(phi0, q)
        r2 = m * ep - real_inner(phi0, gq)
        return np.concatenate([r1.values.real.ravel(), [r2]])

    y0 = np.concatenate([q0.values.real.ravel(), [ep0]])
    try:
        y = sopt.newton_krylov(F, y0, f_tol=tol * max(m, 1e-300), maxiter=max_iter)
    except (sopt.NoConvergence, ValueError, FloatingPointError):
        return None, None, max_iter
    return Field(g, y[:size].reshape(shape)), float(y[size]), max_iter


def solve_point(model: LinearModel, spec: NonlinearitySpec, m: float, warm_start=None,
                tol: float = 1e-12, max_iter: int = 200) -> BoundStatePoint:
    """Solve for the real bound state with |z| = m.

    ``warm_start`` is an optional (q, e') pair, typically from a neighbouring m.
    Falls back to Newton when the contraction stalls.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    spec.check_grid(model.grid)
    grid = model.grid
    if m == 0:
        zero = Field.zeros(grid)
        return BoundStatePoint(m=0.0, E=model.e0, Q=zero, q=zero, eig_residual=0.0,
                               orth_residual=0.0, iterations=0, method="trivial")
    if warm_start is None:
        q0, ep0 = Field.zeros(grid), 0.0
    else:
        q0, ep0 = warm_start
        q0 = _real(q0)
    q, ep, iters = _contraction(model, spec, m, q0, ep0, tol, max_iter)
    method = "contraction"
    if q is None:
        log.info("contraction stalled at m=%.4g; switching to Newton", m)
        newton = _newton_radial if grid.kind == "radial" else _newton_krylov
        q, ep, iters = newton(model, spec, m, q0, ep0, tol)
        method = "newton"
        if q is None:
            raise OutOfFamilyError(f"no bound state found at m = {m:.6g}")
    return _finish(model, spec, m, q, ep, iters, method)


# -- interpolation -------------------------------------------------------------


def _fd_weights(offsets, order: int) -> np.ndarray:
    """Finite-difference weights on integer ``offsets`` for the ``order``-th derivative."""
    offsets = np.asarray(offsets, dtype=float)
    k = len(offsets)
    A = np.vander(offsets, k, increasing=True).T
    b = np.zeros(k)
    b[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(A, b)


def _fd_table(values: np.ndarray, h: float, order: int, parity: int) -> np.ndarray:
    """4th-order derivative table along axis 0 of uniformly sampled ``values``.

    Points near m = 0 use the reflection f(-m) = parity * f(m); points near the
    far end use one-sided stencils.
    """
    N = values.shape[0]
    width = 5 if order == 1 else 6
    ext = np.concatenate([parity * values[2:0:-1], values], axis=0)  # f(-2h), f(-h), f(0)...
    out = np.empty_like(values)
    central = [-2, -1, 0, 1, 2]
    for i in range(N):
        if i + 2 <= N - 1:
            offs = central
        else:
            offs = list(range(-(width - 1) + (N - 1 - i), N - i))
        w = _fd_weights(offs, order)
        acc = 0.0
        for o, wt in zip(offs, w):
            acc = acc + wt * ext[i + o + 2]
        out[i] = acc / h**order
    return out


def _hermite5_basis(t: float, nu: int):
    """Quintic Hermite basis (and its nu-th t-derivative) on [0, 1].

    Order: value0, slope0, curv0, value1, slope1, curv1.
    """
    polys = np.array([
        [1, 0, 0, -10, 15, -6],
        [0, 1, 0, -6, 8, -3],
        [0, 0, 0.5, -1.5, 1.5, -0.5],
        [0, 0, 0, 10, -15, 6],
        [0, 0, 0, -4, 7, -3],
        [0, 0, 0, 0.5, -1, 0.5],
    ])
    out = []
    for c in polys:
        pc = np.polynomial.polynomial.polyder(c, nu) if nu else c
        out.append(np.polynomial.polynomial.polyval(t, pc))
    return out


def _hermite5_basis_over_t(t: float):
    """Basis polynomials divided by t (value0 term omitted: it multiplies f(0) = 0)."""
    polys = np.array([
        [0, 1, 0, -6, 8, -3],
        [0, 0, 0.5, -1.5, 1.5, -0.5],
        [0, 0, 0, 10, -15, 6],
        [0, 0, 0, -4, 7, -3],
        [0, 0, 0, 0.5, -1, 0.5],
    ])
    return [None] + [np.polynomial.polynomial.polyval(t, c[1:]) for c in polys]


def _hermite5(m_grid, f, df, d2f, m: float, nu: int = 0):
    """Evaluate the C^2 quintic Hermite interpolant (or its nu-th derivative) at m."""
    i = int(np.clip(np.searchsorted(m_grid, m, side="right") - 1, 0, len(m_grid) - 2))
    dm = m_grid[i + 1] - m_grid[i]
    t = (m - m_grid[i]) / dm
    b0, b1, b2, b3, b4, b5 = _hermite5_basis(t, nu)
    val = (b0 * f[i] + dm * b1 * df[i] + dm**2 * b2 * d2f[i]
           + b3 * f[i + 1] + dm * b4 * df[i + 1] + dm**2 * b5 * d2f[i + 1])
    return val / dm**nu


@dataclass(eq=False)
class BoundStateFamily:
    """Tabulated m -> (Q[m], E[m]) with derivative tables along m."""

    model: LinearModel
    spec: NonlinearitySpec
    m_grid: np.ndarray
    points: list
    Q_table: np.ndarray
    dQ: np.ndarray
    d2Q: np.ndarray
    E_table: np.ndarray
    dE: np.ndarray
    d2E: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.model.grid

    @property
    def m_max(self) -> float:
        return float(self.m_grid[-1])

    @cached_property
    def phi0_real(self) -> np.ndarray:
        return self.model.phi0.values.real

    def _check(self, m: float) -> None:
        if m > self.m_max * (1 + 1e-12):
            raise OutOfFamilyError(f"|z| = {m:.6g} exceeds m_max = {self.m_max:.6g}")

    def Q_real(self, m: float, nu: int = 0) -> np.ndarray:
        self._check(m)
        return _hermite5(self.m_grid, self.Q_table, self.dQ, self.d2Q, m, nu)

    def E_real(self, m: float, nu: int = 0) -> float:
        self._check(m)
        return float(_hermite5(self.m_grid, self.E_table, self.dE, self.d2E, m, nu))

    def Q_over_m(self, m: float) -> np.ndarray:
        """Q[m]/m, continuous at m = 0 where it equals phi0.

        On the first interval Q[0] = 0, so every Hermite term is divisible by
        t = m/dm; dividing the basis polynomials by t avoids cancellation at tiny m.
        """
        dm = self.m_grid[1] - self.m_grid[0]
        if m >= dm:
            return self.Q_real(m) / m
        _, b1, b2, b3, b4, b5 = _hermite5_basis_over_t(m / dm)
        return (b1 * self.dQ[0] + dm * b2 * self.d2Q[0]
                + (b3 * self.Q_table[1] + dm * b4 * self.dQ[1] + dm**2 * b5 * self.d2Q[1]) / dm)

    def manifest(self) -> dict:
        return {
            "m_grid": [float(v) for v in self.m_grid],
            "E": [float(v) for v in self.E_table],
            "dE": [float(v) for v in self.dE],
            "eig_residual": [p.eig_residual for p in self.points],
            "orth_residual": [p.orth_residual for p in self.points],
            "iterations": [p.iterations for p in self.points],
            "method": [p.method for p in self.points],
            "m_max": self.m_max,
            **self.meta,
        }


def build_family(model: LinearModel, spec: NonlinearitySpec, m_max: float = 0.4,
                 n_samples: int = 33, tol: float = 1e-12) -> BoundStateFamily:
    """Continuation in m on a uniform grid [0, m_max] with warm starts.

    Stops early when a point fails to converge or its residual is out of
    tolerance; the family then ends at the last good sample.
    """
    if n_samples < 17:
        raise ValueError("n_samples must be at least 17")
    m_grid = np.linspace(0.0, m_max, n_samples)
    points = [solve_point(model, spec, 0.0)]
    warm = None
    stop_reason = "complete"
    for m in m_grid[1:]:
        try:
            pt = solve_point(model, spec, float(m), warm_start=warm, tol=tol)
        except OutOfFamilyError as exc:
            stop_reason = str(exc)
            break
        if pt.eig_residual > 1e-8 * max(norm(pt.Q), m) or pt.method == "newton" and pt.iterations > 50:
            stop_reason = f"residual {pt.eig_residual:.3g} out of tolerance at m = {m:.6g}"
            break
        points.append(pt)
        warm = (pt.q, pt.E - model.e0)
    if len(points) < max(n_samples // 2, 6):
        raise FamilyConstructionError(
            f"only {len(points)} of {n_samples} samples converged ({stop_reason})")
    if len(points) < n_samples:
        log.warning("family truncated at m = %.4g: %s", points[-1].m, stop_reason)
    m_grid = m_grid[: len(points)]
    h = m_grid[1] - m_grid[0]
    Q_table = np.stack([p.Q.values.real for p in points])
    E_table = np.array([p.E for p in points])
    dQ = _fd_table(Q_table, h, 1, parity=-1)
    d2Q = _fd_table(Q_table, h, 2, parity=-1)
    dE = _fd_table(E_table, h, 1, parity=1)
    d2E = _fd_table(E_table, h, 2, parity=1)
    # exact values at the origin: DQ[0] = phi0, and parity kills the odd-order terms
    dQ[0] = model.phi0.values.real
    d2Q[0] = 0.0
    dE[0] = 0.0
    return BoundStateFamily(model=model, spec=spec, m_grid=m_grid, points=points, Q_table=Q_table,
                            dQ=dQ, d2Q=d2Q, E_table=E_table, dE=dE, d2E=d2E,
                            meta={"stop_reason": stop_reason})


# -- complex z ----------------------------------------------------------------------


def _polar(z: complex) -> tuple[float, complex]:
    m = abs(z)
    return m, (z / m if m > 0 else 1.0 + 0j)


def Q_of_z(family: BoundStateFamily, z: complex) -> Field:
    m, rot = _polar(complex(z))
    return Field(family.grid, family.Q_real(m) * rot)


def E_of_z(family: BoundStateFamily, z: complex) -> float:
    return family.E_real(abs(z))


def DE_of_z(family: BoundStateFamily, z: complex) -> np.ndarray:
    """(D_1 E, D_2 E): partials of E[z] in Re z and Im z."""
    m, rot = _polar(complex(z))
    if m == 0:
        return np.zeros(2)
    return family.E_real(m, 1) * np.array([rot.real, rot.imag])


def DQ_of_z(family: BoundStateFamily, z: complex, w: complex) -> Field:
    """Directional derivative DQ[z]w of Q in the direction w (R-linear in w).

    At real m it is dQ/dm * Re w + i (Q[m]/m) * Im w; general z by rotation.
    """
    m, rot = _polar(complex(z))
    wr = complex(w) / rot
    if m == 0:
        vals = family.phi0_real * wr
    else:
        vals = family.Q_real(m, 1) * wr.real + 1j * family.Q_over_m(m) * wr.imag
    return Field(family.grid, vals * rot)


def D2Q_of_z(family: BoundStateFamily, z: complex, w1: complex, w2: complex) -> Field:
    """Second derivative D^2Q[z](w1, w2) by centered differences of DQ along w2."""
    z = complex(z)
    hz = max(1e-4, 1e-3 * abs(z))
    w2 = complex(w2)
    if abs(z) + hz * abs(w2) > family.m_max:
        family._check(abs(z) + hz * abs(w2))
    plus = DQ_of_z(family, z + hz * w2, w1)
    minus = DQ_of_z(family, z - hz * w2, w1)
    return (plus - minus) * (0.5 / hz)


def tangent_vectors(family: BoundStateFamily, z: complex) -> tuple[Field, Field]:
    """(D_1 Q[z], D_2 Q[z]): partials in Re z and Im z."""
    return DQ_of_z(family, z, 1.0), DQ_of_z(family, z, 1j)


def H_apply(family: BoundStateFamily, model: LinearModel, spec: NonlinearitySpec, z: complex,
            eta: Field) -> Field:
    """H[z] eta = (-Delta + V) eta + d/de g(Q[z] + e eta), via gauge rotation to real Q."""
    m, rot = _polar(complex(z))
    Qm = Field(family.grid, family.Q_real(m))
    lin = linearize_g(spec, Qm, eta * np.conj(rot)) * rot
    return model.apply(eta) + lin


# -- cross-checks ----------------------------------------------------------------


def bordered_derivatives(family: BoundStateFamily, m: float):
    """(dQ/dm, dE/dm, d2Q/dm2, d2E/dm2) at m from the differentiated equations.

    Differentiating (L - E) Q = 0 with (phi0, Q) = m gives bordered systems
    [[H0 + g'(Q) - E, -Q], [phi0^T, 0]]; used as an independent check of the
    finite-difference tables.  Radial grids only.
    """
    model, spec = family.model, family.spec
    g = model.grid
    if g.kind != "radial":
        raise TypeError("bordered derivative check needs the radial backend")
    pt = solve_point(model, spec, m, warm_start=_nearest_warm(family, m))
    n = g.n
    Q = pt.Q
    xQ = _radial_coords(Q).real
    p = model.phi0_coords
    dg = linearize_g(spec, Q, Field(g, np.ones(n))).values.real
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = model.matrix + np.diag(dg) - pt.E * np.eye(n)
    A[:n, n] = -xQ
    A[n, :n] = p
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    sol = np.linalg.solve(A, rhs)
    dQ = _from_radial_coords(g, sol[:n])
    dE = float(sol[n])
    dQr = _real(dQ)
    g2 = _radial_coords(second_variation(spec, Q, dQr, dQr)).real
    rhs2 = np.zeros(n + 1)
    rhs2[:n] = 2.0 * dE * sol[:n] - g2
    sol2 = np.linalg.solve(A, rhs2)
    return dQr, dE, _real(_from_radial_coords(g, sol2[:n])), float(sol2[n])


def _nearest_warm(family, m):
    i = int(np.argmin(np.abs(family.m_grid - m)))
    pt = family.points[i]
    return (pt.q, pt.E - family.model.e0)


def decay_slope(family: BoundStateFamily, m: float | None = None) -> tuple[float, float]:
    """Least-squares slope of log|Q[m]| over r in [r_max/2, 3 r_max/4] and the bound -sqrt|E|/2."""
    g = family.grid
    m = family.m_max if m is None else m
    Q = np.abs(family.Q_real(m))
    r = g.radius.ravel()
    vals = Q.ravel()
    extent = g.r_max if g.kind == "radial" else 0.5 * g.box
    mask = (r >= 0.5 * extent) & (r <= 0.75 * extent) & (vals > 0)
    slope = float(np.polyfit(r[mask], np.log(vals[mask]), 1)[0])
    return slope, -0.5 * np.sqrt(abs(family.E_real(m)))
