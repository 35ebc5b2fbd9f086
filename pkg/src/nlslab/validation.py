"""Invariant suite run by ``nlslab validate``.

Every check records its measured value, its tolerance and a pass flag.  The
suite is deterministic for a fixed config and seed so its JSON report can be
compared byte for byte across runs.
"""

from __future__ import annotations

import numpy as np

from .boundstate import (DE_of_z, DQ_of_z, E_of_z, H_apply, Q_of_z, build_family)
from .config import ScenarioConfig
from .evolve import IntegratorConfig, evolve, mass, step
from .grid import Field, RadialGrid, inner, laplacian, norm, real_inner, to_spectral
from .linear import (LinearModel, _shift_invert_subspace, _radial_matrix, build_model,
                     dense_eigenpairs, project_c, project_d)
from .modulation import decompose, hc_project, jacobian
from .nonlin import G_value, NonlinearitySpec, g_apply, linearize_g

__all__ = ["Check", "run_suite", "fd_order", "random_field"]


class Check(dict):
    """One named check: value, tolerance, comparison and result."""

    def __init__(self, name: str, value: float, tol: float, kind: str = "le"):
        value = float(value)
        passed = value <= tol if kind == "le" else value >= tol
        super().__init__(name=name, value=value, tolerance=float(tol), kind=kind,
                         passed=bool(passed and np.isfinite(value)))


def random_field(grid, rng, width: float = 3.0, real: bool = False) -> Field:
    """Smooth random localized field (random combination of Gaussian shells)."""
    r = grid.radius
    vals = np.zeros(grid.shape, dtype=complex)
    for _ in range(4):
        c, w = rng.uniform(0, 2 * width), rng.uniform(0.5, 1.5) * width
        amp = rng.standard_normal() + (0 if real else 1j * rng.standard_normal())
        vals += amp * np.exp(-((r - c) / w) ** 2)
    return Field(grid, vals)


def dominated_direction(Q: Field, rng, scale: float = 0.1) -> Field:
    """Random direction with |eta| <= scale |Q| pointwise.

    Finite-difference oracles of |psi|^(p-1) psi lose order where Q + eps eta
    crosses zero; tying eta to Q keeps the segment away from that kink.
    """
    mod = random_field(Q.grid, rng).values
    return Field(Q.grid, scale * Q.values * mod / np.abs(mod).max())


def fd_order(errors, steps) -> float:
    """Least-squares slope of log(error) against log(step)."""
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])


def linearization_order(spec: NonlinearitySpec, Q: Field, eta: Field,
                        eps=(4e-2, 2e-2, 1e-2)) -> tuple[float, list]:
    lin = linearize_g(spec, Q, eta)
    errs = []
    for e in eps:
        fd = (g_apply(spec, Q + eta * e) - g_apply(spec, Q - eta * e)) * (0.5 / e)
        errs.append(norm(fd - lin) / max(norm(lin), 1e-300))
    return fd_order(errs, eps), errs


def _grid_checks(cfg, grid, rng, out):
    a, b = random_field(grid, rng), random_field(grid, rng)
    c = to_spectral(a)
    out.append(Check("grid.parseval", abs(np.linalg.norm(c) - norm(a)) / norm(a),
                     cfg.tolerance("parseval")))
    lhs, rhs = real_inner(laplacian(a), b), real_inner(a, laplacian(b))
    out.append(Check("grid.laplacian_self_adjoint", abs(lhs - rhs) / max(abs(lhs), 1e-300),
                     cfg.tolerance("self_adjoint")))
    out.append(Check("grid.inner_conjugate_symmetry",
                     abs(inner(a, b) - np.conj(inner(b, a))), 1e-13 * norm(a) * norm(b)))


def _linear_checks(cfg, model: LinearModel, rng, out):
    out.append(Check("linear.negative_count", abs(model.negative_count - 1), 0))
    out.append(Check("linear.e0_gap", abs(model.e0), cfg.calibration.min_gap, kind="ge"))
    out.append(Check("linear.phi0_norm", abs(norm(model.phi0) - 1), cfg.tolerance("phi0_norm")))
    out.append(Check("linear.phi0_nonnegative", max(0.0, -model.phi0.values.real.min()), 1e-12))
    out.append(Check("linear.residual", model.residual, cfg.tolerance("eig_residual")))
    psi = random_field(model.grid, rng)
    out.append(Check("linear.project_c_orthogonal", abs(inner(model.phi0, project_c(model, psi))),
                     1e-12 * norm(psi)))
    pd = project_d(model, psi)
    out.append(Check("linear.project_d_idempotent", norm(project_d(model, pd) - pd), 1e-12 * norm(psi)))
    a, b = random_field(model.grid, rng), random_field(model.grid, rng)
    lhs, rhs = real_inner(model.apply(a), b), real_inner(a, model.apply(b))
    out.append(Check("linear.self_adjoint", abs(lhs - rhs) / max(abs(lhs), 1e-300),
                     cfg.tolerance("self_adjoint")))
    if model.grid.kind == "radial":
        coarse = RadialGrid(256, model.grid.r_max)
        ev, fields = dense_eigenpairs(coarse, model.potential, 3)
        V = model.potential.sample(coarse)
        H = _radial_matrix(coarse, V)
        th, X, _ = _shift_invert_subspace(H, 3, float(V.min()), seed=cfg.seed,
                                          guess=coarse.r * np.exp(-coarse.r**2 / 4.0))
        out.append(Check("linear.dense_oracle_e0", abs(th[0] - ev[0]), cfg.tolerance("dense_e0")))
        x_dense = fields[0].u * np.sqrt(4 * np.pi * coarse.h)
        align = abs(float(np.real(x_dense @ X[:, 0])))
        out.append(Check("linear.dense_oracle_alignment", 1 - align, cfg.tolerance("dense_alignment")))


def _nonlin_checks(cfg, spec, Q, rng, out):
    grid = Q.grid
    psi = random_field(grid, rng) * 0.05
    alpha = float(rng.uniform(0, 2 * np.pi))
    rot = np.exp(1j * alpha)
    gd = g_apply(spec, psi * rot) - g_apply(spec, psi) * rot
    out.append(Check("nonlin.g_gauge_covariance", norm(gd) / max(norm(g_apply(spec, psi)), 1e-300),
                     cfg.tolerance("g_gauge")))
    out.append(Check("nonlin.G_gauge_invariance",
                     abs(G_value(spec, psi * rot) - G_value(spec, psi)) / max(abs(G_value(spec, psi)), 1e-300),
                     1e-12))
    eta = random_field(grid, rng) * 0.05
    errs, eps = [], (4e-2, 2e-2, 1e-2)
    target = real_inner(g_apply(spec, psi), eta)
    for e in eps:
        fd = (G_value(spec, psi + eta * e) - G_value(spec, psi - eta * e)) / (2 * e)
        errs.append(abs(fd - target) / abs(target))
    out.append(Check("nonlin.G_variation_order", fd_order(errs, eps), 1.9, kind="ge"))
    order, _ = linearization_order(spec, Q, dominated_direction(Q, rng))
    out.append(Check("nonlin.linearization_order", order, cfg.tolerance("linearization_order"),
                     kind="ge"))
    e1, e2 = random_field(grid, rng), random_field(grid, rng)
    s1 = real_inner(linearize_g(spec, Q, e1), e2)
    s2 = real_inner(e1, linearize_g(spec, Q, e2))
    out.append(Check("nonlin.linearization_symmetry", abs(s1 - s2), 1e-10 * max(norm(e1) * norm(e2), 1)))


def _family_checks(cfg, model, spec, family, rng, out):
    worst_res = max(p.eig_residual / max(norm(p.Q), p.m) for p in family.points[1:])
    out.append(Check("family.eig_residual_rel", worst_res, cfg.tolerance("bound_residual_rel")))
    out.append(Check("family.orth_residual", max(p.orth_residual for p in family.points),
                     cfg.tolerance("bound_orth")))
    ratios = [norm(p.q) / p.m**2 for p in family.points[1:6]]
    monotone = all(b > a for a, b in zip(ratios, ratios[1:]))
    out.append(Check("family.q_over_m2_monotone", 0 if monotone else 1, 0))
    out.append(Check("family.E_limit", abs(family.points[1].E - model.e0), 0.05 * abs(model.e0)))
    gauge, inv = 0.0, 0.0
    for _ in range(5):
        z = family.m_max * 0.9 * rng.uniform(0.05, 1) * np.exp(2j * np.pi * rng.uniform())
        Q = Q_of_z(family, z)
        gauge = max(gauge, norm(DQ_of_z(family, z, 1j * z) - Q * 1j) / norm(Q))
        E = E_of_z(family, z)
        dE = DE_of_z(family, z)
        for j, w in enumerate((1.0, 1j)):
            D = DQ_of_z(family, z, w)
            r = H_apply(family, model, spec, z, D) - D * E - Q * dE[j]
            inv = max(inv, norm(r) / norm(D))
    out.append(Check("family.gauge_identity", gauge, cfg.tolerance("gauge_dq_rel")))
    out.append(Check("family.invariance_relation", inv, cfg.tolerance("invariance_rel")))
    sym = 0.0
    for _ in range(20):
        z = family.m_max * 0.9 * rng.uniform() * np.exp(2j * np.pi * rng.uniform())
        a, b = random_field(model.grid, rng), random_field(model.grid, rng)
        a, b = a * (1 / norm(a)), b * (1 / norm(b))
        s1 = real_inner(H_apply(family, model, spec, z, a), b)
        s2 = real_inner(a, H_apply(family, model, spec, z, b))
        sym = max(sym, abs(s1 - s2))
    out.append(Check("family.H_symmetry", sym, cfg.tolerance("h_symmetry")))


def _modulation_checks(cfg, family, rng, out):
    grid = family.grid
    J = jacobian(family, Field.zeros(grid), 0j)
    out.append(Check("modulation.jacobian_origin", np.abs(J - np.array([[0, -1], [1, 0]])).max(),
                     cfg.tolerance("jacobian_origin")))
    worst = 0.0
    for _ in range(10):
        z = family.m_max * 0.8 * rng.uniform(0.05, 1) * np.exp(2j * np.pi * rng.uniform())
        eta = hc_project(family, z, random_field(grid, rng))
        eta = eta * (1 / norm(eta))
        st = decompose(family, Q_of_z(family, z) + eta * 1e-3)
        worst = max(worst, abs(st.z - z))
    out.append(Check("modulation.roundtrip_z", worst, cfg.tolerance("decompose_z")))


def _evolve_checks(cfg, model, spec, family, out):
    m0 = min(cfg.experiments.evolve.m0, 0.5 * family.m_max)
    b = project_c(model, Field(model.grid, np.exp(-((model.grid.radius - 3.0) / 2.0) ** 2)))
    psi0 = Q_of_z(family, m0) + b * (0.05 / norm(b, "H1"))
    dt = cfg.integrator.dt
    t_end = 20.0
    drifts = []
    for h in (dt, dt / 2):
        run = IntegratorConfig(dt=h, t_end=t_end, sample_every=int(round(1.0 / h)), decompose=False)
        _, tr = evolve(model, spec, None, psi0, run)
        m = np.asarray(tr.mass)
        H = np.asarray(tr.hamiltonian)
        drifts.append((np.abs(m - m[0]).max() / m[0], np.abs(H - H[0]).max()))
    out.append(Check("evolve.mass_drift_rel", drifts[0][0], cfg.tolerance("mass_drift_rel")))
    out.append(Check("evolve.hamiltonian_order", np.log2(drifts[0][1] / drifts[1][1]),
                     cfg.tolerance("hamiltonian_order"), kind="ge"))
    run = IntegratorConfig(dt=dt, t_end=10.0, sample_every=10**9, decompose=False)
    fwd, _ = evolve(model, spec, None, psi0, run)
    back, _ = evolve(model, spec, None, fwd,
                     IntegratorConfig(dt=dt, t_end=10.0, sample_every=10**9, decompose=False,
                                      direction="backward"))
    out.append(Check("evolve.reversibility", norm(back - psi0) / norm(psi0),
                     cfg.tolerance("reversibility")))
    one = step(model, spec, step(model, spec, psi0, dt), -dt)
    out.append(Check("evolve.step_symmetry", norm(one - psi0) / norm(psi0), 1e-10))


def run_suite(cfg: ScenarioConfig, model: LinearModel, spec: NonlinearitySpec) -> dict:
    """Run all invariant checks; returns {'checks': [...], 'passed': bool, 'family': {...}}."""
    rng = np.random.default_rng(cfg.seed)
    checks: list[Check] = []
    _grid_checks(cfg, model.grid, rng, checks)
    _linear_checks(cfg, model, rng, checks)
    family = build_family(model, spec, cfg.family.m_max, cfg.family.n_samples)
    Qmid = Field(model.grid, family.Q_real(0.5 * family.m_max))
    _nonlin_checks(cfg, spec, Qmid, rng, checks)
    _family_checks(cfg, model, spec, family, rng, checks)
    _modulation_checks(cfg, family, rng, checks)
    _evolve_checks(cfg, model, spec, family, checks)
    return {"checks": list(checks), "passed": all(c["passed"] for c in checks),
            "family": {"m_max": family.m_max, "n_samples": len(family.m_grid),
                       "E_min": float(family.E_table.min())}}
