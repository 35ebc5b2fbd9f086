import json

import numpy as np
import pytest

from nlslab import io as fio
from nlslab.cli import EXIT_CONFIG, EXIT_OK, run

SMALL = ["--override", "grid.n=255"]
FREE = ["--override", "potential={kind: tabulated, constant: 0.0}"]


def report(out, cmd):
    return json.loads((out / f"baseline-{cmd}" / "report.json").read_text())


def test_free_laplacian_exits_with_structured_report(tmp_path):
    assert run(["eig", "--out", str(tmp_path), *SMALL, *FREE]) == EXIT_CONFIG
    d = tmp_path / "baseline-eig"
    assert (d / "FAILED").exists() and (d / "config.snapshot").exists()
    rep = report(tmp_path, "eig")
    assert rep["status"] == "error" and "no negative eigenvalue" in rep["error"]
    # spectrum of -d^2/dr^2 with Dirichlet ends: (k pi / r_max)^2
    k = np.arange(1, len(rep["lowest_eigenvalues"]) + 1)
    assert np.allclose(rep["lowest_eigenvalues"], (k * np.pi / 40.0) ** 2, rtol=1e-10)


def test_success_clears_stale_marker(tmp_path):
    run(["eig", "--out", str(tmp_path), *SMALL, *FREE])
    assert run(["eig", "--out", str(tmp_path), *SMALL]) == EXIT_OK
    d = tmp_path / "baseline-eig"
    assert not (d / "FAILED").exists()
    rep = report(tmp_path, "eig")
    assert rep["status"] == "ok" and rep["result"]["model"]["negative_count"] == 1
    phi0 = fio.read_field(d / "fields" / "phi0")
    assert phi0.grid.n == 255


@pytest.mark.parametrize("override,fragment", [("grid.bogus=1", "grid.radial.bogus"),
                                               ("potential.depth=-1", "depth")])
def test_config_errors_exit_2_naming_the_key(tmp_path, capsys, override, fragment):
    assert run(["eig", "--out", str(tmp_path), "--override", override]) == EXIT_CONFIG
    assert fragment in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_missing_config_file(tmp_path):
    assert run(["eig", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_evolve_outputs(tmp_path):
    args = ["evolve", "--out", str(tmp_path), "--override", "grid.n=511",
            "--override", "integrator.t_end=1.0", "--override", "family.n_samples=17"]
    assert run(args) == EXIT_OK
    d = tmp_path / "baseline-evolve"
    for name in ("trajectory.csv", "trajectory.json", "trajectory_t_vs_absz.csv",
                 "trajectory_t_vs_eta_ball.csv", "trajectory.png", "report.json"):
        assert (d / name).exists(), name
    rep = report(tmp_path, "evolve")
    assert rep["result"]["trajectory"]["mass_drift_rel"] <= 1e-10
    first = (d / "report.json").read_bytes()
    assert run(args) == EXIT_OK
    assert (d / "report.json").read_bytes() == first
