import json
from types import SimpleNamespace

import numpy as np
import pytest

from nlslab.boundstate import E_of_z, Q_of_z
from nlslab.evolve import (CSV_COLUMNS, IntegratorConfig, Sponge, evolve, extract_scattering,
                           hamiltonian, mass, step)
from nlslab.experiments import shell_perturbation
from nlslab.grid import CartesianGrid, Field, RadialGrid, from_spectral, norm
from nlslab.linear import linear_propagate, project_c
from nlslab.modulation import decompose
from nlslab.nonlin import GaussianKernel, HartreeTerm, NonlinearitySpec, PowerTerm
from nlslab.validation import random_field

FREE = NonlinearitySpec([])


@pytest.mark.parametrize("grid", [RadialGrid(127, 20.0), CartesianGrid(16, 10.0)],
                         ids=["radial", "cartesian"])
def test_free_step_is_exact_phase_on_a_mode(grid):
    model = SimpleNamespace(grid=grid, V=np.zeros(grid.shape))
    c = np.zeros(grid.shape, dtype=complex)
    idx = (5,) if grid.kind == "radial" else (2, 3, 1)
    c[idx] = 1.0
    psi = from_spectral(grid, c)
    dt = 0.01
    out = step(model, FREE, psi, dt)
    k2 = grid.k2[idx] if grid.kind == "radial" else np.broadcast_to(grid.k2, grid.shape)[idx]
    assert norm(out - psi * np.exp(-1j * k2 * dt)) <= 1e-13


def test_step_is_time_symmetric(lab, rng):
    psi = Q_of_z(lab.family, 0.2) + random_field(lab.grid, rng) * 0.05
    back = step(lab.model, lab.spec, step(lab.model, lab.spec, psi, 0.005), -0.005)
    assert norm(back - psi) <= 1e-10 * norm(psi)


def test_hartree_step_symmetric_on_box(rng):
    from nlslab.linear import GaussianWell, build_model

    grid = CartesianGrid(16, 16.0)
    model = build_model(grid, GaussianWell(1.79, 2.0))
    spec = NonlinearitySpec([HartreeTerm(GaussianKernel(1.0, 1.5))])
    psi = random_field(grid, rng) * 0.1
    back = step(model, spec, step(model, spec, psi, 0.01), -0.01)
    assert norm(back - psi) <= 1e-10 * norm(psi)


def test_hamiltonian_of_ground_state(lab):
    assert hamiltonian(lab.model, FREE, lab.model.phi0) == pytest.approx(0.5 * lab.model.e0, rel=1e-10)
    assert mass(lab.model.phi0) == pytest.approx(1.0, rel=1e-12)


def test_solitary_wave_is_preserved(lab):
    m = 0.1
    Q = Q_of_z(lab.family, m)
    E = E_of_z(lab.family, m)
    cfg = IntegratorConfig(dt=0.0025, t_end=20.0, sample_every=4000, sponge=None)
    psi, traj = evolve(lab.model, lab.spec, lab.family, Q, cfg)
    st = decompose(lab.family, psi)
    assert abs(abs(st.z) - m) <= 1e-6
    assert norm(st.eta) <= 1e-6 * norm(Q)
    assert np.abs(psi.values - Q.values * np.exp(-1j * E * 20.0)).max() <= 1e-6
    assert traj.summary()["mass_drift_rel"] <= 1e-12


def test_reversibility(lab, rng):
    psi0 = Q_of_z(lab.family, 0.1) + shell_perturbation(lab) * 0.05
    fwd, _ = evolve(lab.model, lab.spec, None, psi0, IntegratorConfig(dt=0.005, t_end=10.0,
                                                                      sample_every=10**6))
    back, traj = evolve(lab.model, lab.spec, None, fwd,
                        IntegratorConfig(dt=0.005, t_end=10.0, sample_every=1000, direction="backward"))
    assert norm(back - psi0) <= 1e-8 * norm(psi0)
    assert traj.t[-1] == pytest.approx(-10.0)


def test_backward_runs_reject_sponge(lab):
    cfg = IntegratorConfig(dt=0.01, t_end=1.0, sample_every=10, sponge=Sponge.default(lab.grid),
                           direction="backward")
    with pytest.raises(ValueError, match="sponge"):
        evolve(lab.model, lab.spec, None, lab.model.phi0 * 0.1, cfg)


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.1, t_end=1.0, direction="sideways")


def test_sponge_profile_and_absorption(lab):
    sp = Sponge.default(lab.grid)
    prof = sp.profile(lab.grid)
    r = lab.grid.r
    assert np.all(prof[r <= sp.start_radius] == 0) and prof.max() == pytest.approx(sp.strength, rel=1e-3)
    # an outgoing pulse loses its mass in the sponge but keeps it without one
    pulse = project_c(lab.model, Field(lab.grid, np.exp(-((r - 5) ** 2)) * np.exp(2j * r)))
    base = dict(dt=0.005, t_end=40.0, sample_every=2000)
    _, with_sp = evolve(lab.model, FREE, None, pulse, IntegratorConfig(**base, sponge=sp))
    _, without = evolve(lab.model, FREE, None, pulse, IntegratorConfig(**base))
    assert with_sp.mass[-1] <= 0.05 * with_sp.mass[0]
    assert without.mass[-1] == pytest.approx(without.mass[0], rel=1e-10)
    assert with_sp.meta["absorbed_mass"] > 0.9 * with_sp.mass[0]


def test_short_run_conservation_and_order(lab):
    psi0 = Q_of_z(lab.family, 0.1) + shell_perturbation(lab) * 0.05
    drifts = []
    for dt in (0.01, 0.005):
        _, tr = evolve(lab.model, lab.spec, None, psi0,
                       IntegratorConfig(dt=dt, t_end=10.0, sample_every=int(0.5 / dt), decompose=False))
        s = tr.summary()
        assert s["mass_drift_rel"] <= 1e-10
        drifts.append(s["hamiltonian_drift"])
    assert np.log2(drifts[0] / drifts[1]) >= 1.9


def test_trajectory_outputs(lab, tmp_path):
    psi0 = Q_of_z(lab.family, 0.1) + shell_perturbation(lab) * 0.02
    cfg = IntegratorConfig(dt=0.01, t_end=2.0, sample_every=50, snapshot_times=(1.0, 2.0))
    _, tr = evolve(lab.model, lab.spec, lab.family, psi0, cfg)
    assert tr.t == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])
    assert [t for t, _ in tr.snapshots] == pytest.approx([1.0, 2.0])
    assert np.all(np.diff(tr.t) > 0)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].split(",") == CSV_COLUMNS and len(lines) == 6
    tr.to_json(tmp_path / "t.json")
    data = json.loads((tmp_path / "t.json").read_text())
    assert data["columns"] == CSV_COLUMNS and len(data["rows"]) == 5
    # |v| is quadratic in the radiation: regress |v| <= C ||eta||_6^2
    a = tr.arrays()
    C = np.abs(a["v"]) / a["eta_L6"] ** 2
    assert np.all(np.isfinite(C)) and C.max() <= 10 * np.median(C)


def test_scattering_of_linear_run_is_constant(small_model):
    m = small_model
    eta0 = project_c(m, Field(m.grid, np.exp(-((m.grid.r - 3) / 2) ** 2)))
    snaps = [(t, linear_propagate(m, eta0, t)) for t in (2.0, 4.0, 8.0)]
    eta_plus, log = extract_scattering(m, snaps, warn=False)
    assert norm(eta_plus - eta0, "H1") <= 1e-9
    assert max(log["cauchy_h1"]) <= 1e-9
    with pytest.raises(ValueError):
        extract_scattering(m, snaps[::-1])


def test_scattering_of_exact_soliton_vanishes(lab):
    Q = Q_of_z(lab.family, 0.1)
    cfg = IntegratorConfig(dt=0.0025, t_end=20.0, sample_every=4000, snapshot_times=(5.0, 10.0, 20.0))
    _, tr = evolve(lab.model, lab.spec, lab.family, Q, cfg)
    eta_plus, _ = extract_scattering(lab.model, tr.snapshots, warn=False)
    assert norm(eta_plus, "H1") <= 1e-6


def test_power_terms_evolve_on_cartesian_box(rng):
    from nlslab.linear import GaussianWell, build_model

    grid = CartesianGrid(16, 16.0)
    model = build_model(grid, GaussianWell(1.79, 2.0))
    spec = NonlinearitySpec([PowerTerm(-1.0, 7 / 3)])
    psi0 = random_field(grid, rng) * 0.05
    _, tr = evolve(model, spec, None, psi0, IntegratorConfig(dt=0.01, t_end=1.0, sample_every=20))
    assert tr.summary()["mass_drift_rel"] <= 1e-12
