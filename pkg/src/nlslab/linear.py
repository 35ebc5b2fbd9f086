"""The discretized operator -Delta + V, its ground state and the linear flow.

On radial grids all dense linear algebra is done in the orthonormal
coordinates x = sqrt(4*pi*h) * r * psi, in which the L2 inner product is the
Euclidean one and -Delta + V is a symmetric matrix.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .grid import FOUR_PI, CartesianGrid, Field, Grid, RadialGrid, inner, laplacian, spectral_multiply

log = logging.getLogger(__name__)

__all__ = [
    "GaussianWell",
    "TabulatedPotential",
    "PotentialSpec",
    "AssumptionViolation",
    "LinearModel",
    "build_model",
    "dense_eigenpairs",
    "negative_eigenvalue_count",
    "project_d",
    "project_c",
    "linear_propagate",
    "calibrate_depth",
]


@dataclass(frozen=True)
class GaussianWell:
    """V(r) = -depth * exp(-r^2 / width^2)."""

    depth: float
    width: float = 2.0

    def __post_init__(self):
        if self.depth < 0 or self.width <= 0:
            raise ValueError("GaussianWell needs depth >= 0 and width > 0")

    def sample(self, grid: Grid) -> np.ndarray:
        return -self.depth * np.exp(-grid.radius**2 / self.width**2)


@dataclass(frozen=True, eq=False)
class TabulatedPotential:
    """Potential given directly by its samples on the grid."""

    values: np.ndarray

    def sample(self, grid: Grid) -> np.ndarray:
        v = np.asarray(self.values, dtype=float)
        if v.shape != grid.shape:
            raise ValueError(f"tabulated potential has shape {v.shape}, grid needs {grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("tabulated potential must be finite")
        return v


PotentialSpec = Union[GaussianWell, TabulatedPotential]


class AssumptionViolation(ValueError):
    """The linear operator does not have exactly one negative eigenvalue."""

    def __init__(self, message: str, eigenvalues=()):
        super().__init__(message)
        self.eigenvalues = list(eigenvalues)


@lru_cache(maxsize=4)
def _kinetic_matrix(grid: RadialGrid) -> np.ndarray:
    S = grid.dst_matrix()
    K = (S * grid.k2) @ S
    K = 0.5 * (K + K.T)
    K.setflags(write=False)
    return K


def _radial_matrix(grid: RadialGrid, V: np.ndarray) -> np.ndarray:
    H = _kinetic_matrix(grid).copy()
    H[np.diag_indices_from(H)] += V
    return H


def _radial_coords(psi: Field) -> np.ndarray:
    g = psi.grid
    return np.sqrt(FOUR_PI * g.h) * g.r * psi.values


def _from_radial_coords(grid: RadialGrid, x: np.ndarray) -> Field:
    return Field(grid, x / (np.sqrt(FOUR_PI * grid.h) * grid.r))


def negative_eigenvalue_count(H: np.ndarray) -> int:
    """Number of negative eigenvalues of a symmetric matrix (Sylvester inertia)."""
    _, d, _ = sla.ldl(H, lower=True)
    # D is block diagonal with 1x1 and 2x2 blocks; its inertia equals that of H
    ev = []
    i = 0
    n = d.shape[0]
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            ev.extend(np.linalg.eigvalsh(d[i:i + 2, i:i + 2]))
            i += 2
        else:
            ev.append(d[i, i])
            i += 1
    return int(np.sum(np.asarray(ev) < 0))


def _shift_invert_subspace(H: np.ndarray, k: int, lower: float, seed: int = 0, tol: float = 1e-12,
                           maxiter: int = 400, guess: np.ndarray | None = None
                           ) -> tuple[np.ndarray, np.ndarray, int]:
    """Lowest k eigenpairs by block shift-invert iteration with Rayleigh-Ritz deflation.

    ``guess`` (optional) seeds the first block column; on large domains a
    random block has almost no overlap with a localized ground state.
    """
    n = H.shape[0]
    b = min(n, k + 5)
    rng = np.random.default_rng(seed)
    X0 = rng.standard_normal((n, b))
    if guess is not None:
        X0[:, 0] = guess
    X = np.linalg.qr(X0)[0]
    # -Delta >= 0, so lower (= min V) bounds the spectrum from below
    sigma = lower - 1.0
    lu = sla.lu_factor(H - sigma * np.eye(n))
    reshifted = False
    # residual floor set by roundoff in H @ x
    floor = 50.0 * np.finfo(float).eps * (np.abs(H.diagonal()).max() + np.abs(lower))
    tol0 = max(tol, floor)
    for it in range(1, maxiter + 1):
        Y = sla.lu_solve(lu, X)
        Y = np.linalg.qr(Y)[0]
        HY = H @ Y
        theta, W = np.linalg.eigh(Y.T @ HY)
        X = Y @ W
        R = HY @ W[:, :k] - X[:, :k] * theta[:k]
        res = np.linalg.norm(R, axis=0)
        # higher pairs sit in a dense continuum on large domains and converge
        # slowly; only the ground pair is held to the full tolerance there
        if res[0] <= tol0 and (np.all(res <= 1e3 * tol0) or it >= 60):
            return theta[:k], X[:, :k], it
        # move the shift next to theta[0] once that Ritz pair has settled
        if not reshifted and it >= 6 and res[0] <= 1e-6 * (abs(theta[0]) + 1.0):
            gap = theta[1] - theta[0]
            sigma = theta[0] - max(0.25 * gap, 1e-3)
            lu = sla.lu_factor(H - sigma * np.eye(n))
            reshifted = True
    log.warning("shift-invert iteration hit maxiter; residuals %s", res)
    return theta[:k], X[:, :k], maxiter


def dense_eigenpairs(grid: RadialGrid, potential: PotentialSpec, k: int = 3):
    """Dense diagonalization oracle: lowest k eigenvalues and fields."""
    V = potential.sample(grid)
    w, U = np.linalg.eigh(_radial_matrix(grid, V))
    fields = []
    for j in range(k):
        x = U[:, j] * np.sign(U[:, j].sum())
        fields.append(_from_radial_coords(grid, x))
    return w[:k], fields


@dataclass(eq=False)
class LinearModel:
    """-Delta + V on a grid with its ground eigenpair (e0, phi0)."""

    grid: Grid
    potential: PotentialSpec
    V: np.ndarray
    e0: float
    phi0: Field
    negative_count: int
    eigenvalues: np.ndarray
    residual: float
    iterations: int = 0
    p_wave_negative: int = 0
    extras: dict = field(default_factory=dict)

    def apply(self, psi: Field) -> Field:
        """(-Delta + V) psi."""
        return Field(self.grid, -laplacian(psi).values + self.V * psi.values)

    # -- radial dense machinery ----------------------------------------------

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.grid.kind != "radial":
            raise TypeError("dense matrix only exists for radial grids")
        return _radial_matrix(self.grid, self.V)

    @cached_property
    def phi0_coords(self) -> np.ndarray:
        return _radial_coords(self.phi0).real

    @cached_property
    def spectral_decomposition(self) -> tuple[np.ndarray, np.ndarray]:
        """Full eigendecomposition (radial only), used by the exact propagator."""
        return np.linalg.eigh(self.matrix)

    @cached_property
    def _t_factor(self):
        # T + P_d is SPD and maps the phi0 complement to itself
        p = self.phi0_coords
        A = self.matrix - self.e0 * np.eye(self.grid.n) + np.outer(p, p)
        return sla.cho_factor(A)

    def solve_T(self, rhs: Field, tol: float = 1e-12) -> Field:
        """Solve (-Delta + V - e0) x = P_c rhs with x orthogonal to phi0."""
        rhs = project_c(self, rhs)
        if self.grid.kind == "radial":
            b = _radial_coords(rhs)
            x = self._solve_t_coords(b)
            # one step of iterative refinement
            r = b - (self.matrix @ x - self.e0 * x + self.phi0_coords * (self.phi0_coords @ x))
            x = x + self._solve_t_coords(r)
            out = _from_radial_coords(self.grid, x)
        else:
            out = self._solve_t_cartesian(rhs, tol)
        return project_c(self, out)

    def _solve_t_coords(self, b: np.ndarray) -> np.ndarray:
        if np.iscomplexobj(b):
            return sla.cho_solve(self._t_factor, b.real) + 1j * sla.cho_solve(self._t_factor, b.imag)
        return sla.cho_solve(self._t_factor, b)

    def _solve_t_cartesian(self, rhs: Field, tol: float) -> Field:
        g = self.grid
        shape = g.shape
        phi = self.phi0.values.real
        w = g.h**3

        def matvec(x):
            f = Field(g, x.reshape(shape))
            y = self.apply(f).values.real - self.e0 * x.reshape(shape)
            y = y + phi * (w * np.sum(phi * x.reshape(shape)))
            return y.ravel()

        shift = max(abs(self.e0), 0.1)

        def precond(x):
            f = spectral_multiply(Field(g, x.reshape(shape)), 1.0 / (g.k2 + shift))
            return f.values.real.ravel()

        n = int(np.prod(shape))
        A = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
        M = spla.LinearOperator((n, n), matvec=precond, dtype=float)
        parts = []
        for comp in (rhs.values.real, rhs.values.imag):
            if not np.any(comp):
                parts.append(np.zeros(n))
                continue
            x, info = spla.cg(A, comp.ravel(), rtol=tol, atol=0.0, M=M, maxiter=2000)
            if info != 0:
                log.warning("CG for T^{-1} did not converge (info=%d)", info)
            parts.append(x)
        return Field(g, (parts[0] + 1j * parts[1]).reshape(shape))

    def summary(self) -> dict:
        from .io import grid_to_dict

        return {
            "grid": grid_to_dict(self.grid),
            "potential": _potential_summary(self.potential),
            "e0": self.e0,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "negative_count": self.negative_count,
            "p_wave_negative": self.p_wave_negative,
            "residual": self.residual,
            "iterations": self.iterations,
        }


def _potential_summary(p) -> dict:
    if isinstance(p, GaussianWell):
        return {"kind": "gaussian_well", "depth": p.depth, "width": p.width}
    return {"kind": "tabulated"}


def build_model(grid: Grid, potential: PotentialSpec, k: int = 3, seed: int = 0,
                min_gap: float = 0.0) -> LinearModel:
    """Build the linear model and check that exactly one eigenvalue is negative.

    On radial grids the negative count is exact (matrix inertia) and includes
    the p-wave channel, whose bound states are threefold degenerate in R^3
    and invisible to the radial reduction otherwise.
    """
    V = potential.sample(grid)
    if grid.kind == "radial":
        H = _radial_matrix(grid, V)
        x_guess = grid.r * np.exp(-grid.r**2 / 4.0)
        evals, X, iters = _shift_invert_subspace(H, k, float(V.min()), seed=seed, guess=x_guess)
        # every eigenvalue of H must be >= the computed lowest one (inertia check)
        if negative_eigenvalue_count(H - (evals[0] - 1e-9 * (1 + abs(evals[0]))) * np.eye(grid.n)):
            raise RuntimeError("shift-invert iteration missed the lowest eigenvalue")
        count_s = negative_eigenvalue_count(H)
        count_p = negative_eigenvalue_count(H + np.diag(2.0 / grid.r**2))
        negative = count_s + 3 * count_p
        x0 = X[:, 0] * np.sign(X[:, 0].sum())
        phi0 = _from_radial_coords(grid, x0)
    else:
        evals, phi_vals, iters = _cartesian_eigs(grid, V, k, seed)
        count_s, count_p = int(np.sum(evals < 0)), 0
        negative = count_s
        phi0 = Field(grid, phi_vals)
    neg_evals = [float(e) for e in evals if e < 0]
    if negative == 0:
        raise AssumptionViolation("no negative eigenvalue: nothing to perturb", evals)
    if negative != 1:
        raise AssumptionViolation(
            f"-Delta+V has {negative} negative eigenvalues (s-wave {count_s}, p-wave {count_p}); "
            f"lowest computed: {neg_evals}", neg_evals)
    e0 = float(evals[0])
    if min_gap and abs(e0) < min_gap:
        raise AssumptionViolation(f"e0 = {e0:.4g} is within {min_gap} of the continuum", [e0])
    model = LinearModel(grid=grid, potential=potential, V=V, e0=e0, phi0=phi0,
                        negative_count=negative, eigenvalues=np.asarray(evals), residual=0.0,
                        iterations=iters, p_wave_negative=count_p)
    res = model.apply(phi0) - e0 * phi0
    model.residual = float(np.sqrt(real_norm_sq(res)))
    if model.residual > 1e-6:
        warnings.warn(f"ground-state residual {model.residual:.3g} exceeds 1e-6", stacklevel=2)
    return model


def real_norm_sq(a: Field) -> float:
    return float(np.sum(a.grid.weights * np.abs(a.values) ** 2))


def _cartesian_eigs(grid: CartesianGrid, V: np.ndarray, k: int, seed: int):
    shape = grid.shape
    n = int(np.prod(shape))
    w = grid.h**1.5

    def matvec(X):
        X = np.asarray(X)
        cols = X.reshape(n, -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            f = Field(grid, cols[:, j].reshape(shape))
            out[:, j] = (-laplacian(f).values.real + V * f.values.real).ravel()
        return out.reshape(X.shape)

    shift = max(-V.min(), 0.0) + 1.0

    def precond(X):
        X = np.asarray(X)
        cols = X.reshape(n, -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            f = spectral_multiply(Field(grid, cols[:, j].reshape(shape)), 1.0 / (grid.k2 + shift))
            out[:, j] = f.values.real.ravel()
        return out.reshape(X.shape)

    A = spla.LinearOperator((n, n), matvec=matvec, matmat=matvec, dtype=float)
    M = spla.LinearOperator((n, n), matvec=precond, matmat=precond, dtype=float)
    rng = np.random.default_rng(seed)
    X0 = rng.standard_normal((n, k + 2))
    X0[:, 0] = np.exp(-grid.radius.ravel() ** 2 / 4.0)
    with warnings.catch_warnings():
        # upper block vectors converge slowly; the ground pair is checked by its residual
        warnings.simplefilter("ignore", UserWarning)
        evals, vecs = spla.lobpcg(A, X0, M=M, largest=False, tol=1e-10, maxiter=500)
    order = np.argsort(evals)
    evals = evals[order][:k]
    v0 = vecs[:, order[0]]
    v0 = v0 * np.sign(v0.sum()) / (w * np.linalg.norm(v0))
    return evals, v0.reshape(shape), 0


def project_d(model: LinearModel, psi: Field) -> Field:
    """P_d psi = phi0 (phi0, psi)."""
    return model.phi0 * inner(model.phi0, psi)


def project_c(model: LinearModel, psi: Field) -> Field:
    """P_c psi = psi - P_d psi."""
    return psi - project_d(model, psi)


def kinetic_multiplier(grid: Grid, dt: float) -> np.ndarray:
    """Spectral multiplier of exp(i dt Delta)."""
    return np.exp(-1j * dt * grid.k2)


def linear_propagate(model: LinearModel, psi: Field, t: float, dt: float | None = None) -> Field:
    """Solve i psi_t = (-Delta + V) psi for time t (negative t runs backward).

    Radial grids use the exact eigendecomposition unless ``dt`` is given, in
    which case the Strang split-step scheme of the nonlinear evolver is used
    with g = 0.  Cartesian grids always use split-step (default dt = 0.005).
    """
    if t == 0:
        return psi
    if model.grid.kind == "radial" and dt is None:
        w, U = model.spectral_decomposition
        x = _radial_coords(psi)
        c = U.T @ np.stack([x.real, x.imag], axis=1)
        c = (c[:, 0] + 1j * c[:, 1]) * np.exp(-1j * w * t)
        y = U @ np.stack([c.real, c.imag], axis=1)
        return _from_radial_coords(model.grid, y[:, 0] + 1j * y[:, 1])
    dt = 0.005 if dt is None else abs(dt)
    nsteps = max(1, int(round(abs(t) / dt)))
    h = np.sign(t) * abs(t) / nsteps
    half_v = np.exp(-0.5j * h * model.V)
    kin = kinetic_multiplier(model.grid, h)
    vals = psi
    for _ in range(nsteps):
        vals = spectral_multiply(vals * half_v, kin) * half_v
    return vals


def lowest_s_eigenvalue_below(grid: RadialGrid, potential: PotentialSpec, level: float) -> bool:
    """True when -Delta + V has an s-wave eigenvalue below ``level``."""
    H = _radial_matrix(grid, potential.sample(grid)) - level * np.eye(grid.n)
    try:
        sla.cho_factor(H)
    except np.linalg.LinAlgError:
        return True
    return False


def calibrate_depth(grid: RadialGrid, width: float = 2.0, target: float = -0.3,
                    window: tuple[float, float] = (-0.5, -0.1), tol: float = 1e-6,
                    max_depth: float = 50.0) -> float:
    """Bisect the Gaussian-well depth so that e0 sits at ``target``.

    Uses the Cholesky test of (-Delta + V - target) as the monotone predicate
    e0 < target, then verifies the single-eigenvalue condition with
    ``build_model``.
    """
    if not window[0] <= target <= window[1]:
        raise ValueError("target must lie inside the admissible window")
    lo, hi = 0.0, 1.0
    while not lowest_s_eigenvalue_below(grid, GaussianWell(hi, width), target):
        lo, hi = hi, 2.0 * hi
        if hi > max_depth:
            raise AssumptionViolation(f"no depth below {max_depth} reaches e0 = {target}")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if lowest_s_eigenvalue_below(grid, GaussianWell(mid, width), target):
            hi = mid
        else:
            lo = mid
    depth = 0.5 * (lo + hi)
    model = build_model(grid, GaussianWell(depth, width))
    if not window[0] <= model.e0 <= window[1]:
        raise AssumptionViolation(f"calibrated e0 = {model.e0} outside {window}", [model.e0])
    return depth
