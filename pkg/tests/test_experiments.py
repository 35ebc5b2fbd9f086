import numpy as np
import pytest

from nlslab.boundstate import E_of_z, Q_of_z
from nlslab.experiments import (DECAY_FUNCTIONS, PlanFailure, discrete_frequency, make_xi0,
                                measure_soliton_distance, plan_slow_decay, run_stability,
                                run_wave_operator, shell_perturbation)
from nlslab.grid import Field, inner, norm
from nlslab.linear import project_c
from nlslab.modulation import decompose


def test_shell_perturbation_is_continuous_and_normalized(lab):
    b = shell_perturbation(lab)
    assert abs(inner(lab.model.phi0, b)) <= 1e-12
    assert norm(b, "H1") == pytest.approx(1.0, rel=1e-12)


def test_discrete_frequency_converges_to_E(lab):
    E = E_of_z(lab.family, 0.1)
    errs = [abs(discrete_frequency(lab, 0.1, dt, t_probe=5.0) - E) for dt in (0.01, 0.005)]
    assert errs[1] <= 1e-5 * abs(E)
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_unperturbed_solitary_wave_is_stable(lab):
    rep = run_stability(lab, 0.1, Field.zeros(lab.grid), 0.0, t_end=10.0, dt=0.0025,
                        sample_every=200, snapshot_times=(5.0, 10.0), sponge=None)
    assert rep.m_infinity_estimate == pytest.approx(0.1, abs=1e-6)
    assert rep.v_l1 <= 1e-6
    assert rep.trajectory.failure is None
    assert norm(rep.eta_plus, "H1") <= 1e-6
    s = rep.summary()
    assert s["m0"] == 0.1 and s["trajectory"]["mass_drift_rel"] <= 1e-12


def test_make_xi0_constraints(lab):
    xi = make_xi0(lab, ball_radius=5.0)
    ball = (lab.grid.radius <= 5.0).astype(float)
    assert abs(inner(lab.model.phi0, xi)) <= 1e-12
    assert abs(inner(lab.model.phi0 * ball, xi)) <= 1e-12
    assert norm(xi, "H1") == pytest.approx(1.0, rel=1e-12)


def test_plan_fails_when_f_cannot_reach_threshold(lab):
    xi = make_xi0(lab)
    with pytest.raises(PlanFailure) as exc:
        plan_slow_decay(lab, xi, 0.02, 3, DECAY_FUNCTIONS["inv_log"], horizon=20.0)
    assert exc.value.achieved == 0 and exc.value.partial == []


def test_plan_bounds_hold_for_fast_decay(lab):
    xi = make_xi0(lab)
    f = DECAY_FUNCTIONS["inv_square"]
    plan = plan_slow_decay(lab, xi, 0.5, 2, f, horizon=30.0)
    assert plan.J == 2 and len(plan.T_list) == 2
    assert np.all(np.diff(plan.T_list) > 0)
    for b, T in zip(plan.bounds, plan.T_list):
        assert b["T_j"] == T and b["T_j"] > b["T_search"]
        assert b["strz_tail"] < b["threshold"] and b["l6_sum"] < b["threshold"]
        assert b["f_sup"] <= b["f_threshold"]
        assert f(np.asarray(b["T_search"] + plan.time_step)) <= b["f_threshold"]
    assert plan.summary()["T_list"] == plan.T_list


def test_soliton_distance_oracles(lab):
    z = 0.2 * np.exp(1.3j)
    d = measure_soliton_distance(lab.family, Q_of_z(lab.family, z), 5.0)
    assert d["distance"] <= 1e-8 and abs(d["z"] - z) <= 1e-6 and not d["on_boundary"]
    zero = measure_soliton_distance(lab.family, Field.zeros(lab.grid), 5.0)
    assert zero["distance"] == 0.0 and zero["z"] == 0


def test_wave_operator_without_radiation_returns_the_solitary_wave(lab):
    # the scheme's rotating profile differs from Q[m] by O(dt^2)
    Q = Q_of_z(lab.family, 0.1)
    errs = []
    for dt in (0.005, 0.0025):
        rep = run_wave_operator(lab, 0.1, Field.zeros(lab.grid), [2.0, 4.0, 20.0], dt=dt)
        assert "20.0" in rep.failures and "r_max/3" in rep.failures["20.0"]
        assert set(rep.psi_initial) == {2.0, 4.0}
        errs.append(max(norm(psi - Q, "H1") for psi in rep.psi_initial.values()))
        assert rep.forward_check["m_error"] <= 1e-8
        assert rep.summary()["successive_h1"] == rep.successive
    assert errs[1] <= 1e-6
    assert np.log2(errs[0] / errs[1]) >= 1.8


def test_wave_operator_rejects_bound_state_component(lab):
    with pytest.raises(ValueError, match="P_c"):
        run_wave_operator(lab, 0.1, lab.model.phi0 * 0.01, [2.0])


def test_wave_operator_threads_are_deterministic(lab):
    eta = shell_perturbation(lab) * 0.01
    a = run_wave_operator(lab, 0.1, eta, [1.0, 2.0], dt=0.005, forward_check=False, jobs=1)
    b = run_wave_operator(lab, 0.1, eta, [1.0, 2.0], dt=0.005, forward_check=False, jobs=2)
    for T in (1.0, 2.0):
        assert np.array_equal(a.psi_initial[T].values, b.psi_initial[T].values)
    st = decompose(lab.family, a.psi_initial[2.0])
    assert abs(abs(st.z) - 0.1) <= 1e-3
    assert norm(project_c(lab.model, st.eta), "H1") == pytest.approx(0.01, rel=0.2)
