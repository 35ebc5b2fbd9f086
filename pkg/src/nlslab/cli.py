"""Command-line entry point: ``nlslab <command> --config FILE [--override k=v ...]``.

Every command writes ``OUT/<run_id>-<command>/`` containing ``config.snapshot``,
``report.json`` and any CSV, field and figure outputs.  A ``FAILED`` marker is
left behind when a command aborts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as fio
from .boundstate import build_family
from .config import BASELINE_CONFIG, ConfigError, ScenarioConfig, dump_config, load_config
from .evolve import Trajectory, evolve
from .experiments import (DECAY_FUNCTIONS, Lab, PlanFailure, make_xi0, plan_slow_decay,
                          run_slow_decay, run_stability, run_wave_operator, shell_perturbation)
from .grid import Field, norm
from .linear import AssumptionViolation, GaussianWell, build_model, calibrate_depth, project_c

log = logging.getLogger("nlslab")

COMMANDS = ("calibrate", "eig", "family", "evolve", "stability", "waveop", "slowdecay", "validate")

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class CommandError(RuntimeError):
    def __init__(self, message, code=EXIT_RUNTIME, details=None):
        super().__init__(message)
        self.code = code
        self.details = details or {}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_columns(path, header, *cols) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{float(x):.17g}" for x in row) + "\n")


# -- building blocks ---------------------------------------------------------------


def _potential(cfg: ScenarioConfig, grid):
    if cfg.potential is not None:
        return cfg.potential.build(grid), False
    if grid.kind != "radial":
        raise CommandError("calibration needs a radial grid; give potential explicitly", EXIT_CONFIG)
    c = cfg.calibration
    depth = calibrate_depth(grid, c.width, c.target, tuple(c.window), c.tol)
    log.info("no potential in config; calibrated depth %.10g", depth)
    return GaussianWell(depth, c.width), True


def build_lab(cfg: ScenarioConfig, grid_cfg=None) -> Lab:
    grid = (grid_cfg or cfg.grid).build()
    pot, _ = _potential(cfg, grid)
    model = build_model(grid, pot, seed=cfg.seed, min_gap=cfg.calibration.min_gap)
    spec = cfg.nonlinearity.build()
    family = build_family(model, spec, cfg.family.m_max, cfg.family.n_samples)
    return Lab(model, spec, family)


# -- commands -----------------------------------------------------------------------------


def cmd_calibrate(cfg, out: Path, jobs: int) -> dict:
    grid = cfg.grid.build()
    if grid.kind != "radial":
        raise CommandError("calibrate runs on radial grids", EXIT_CONFIG)
    c = cfg.calibration
    depth = calibrate_depth(grid, c.width, c.target, tuple(c.window), c.tol)
    model = build_model(grid, GaussianWell(depth, c.width), seed=cfg.seed, min_gap=c.min_gap)
    calibrated = cfg.model_copy(update={"potential": None})
    text = dump_config(calibrated).replace("potential: null",
                                           f"potential:\n  depth: {depth!r}\n  kind: gaussian_well\n"
                                           f"  width: {c.width!r}")
    (out / "calibrated.yaml").write_text(text)
    return {"depth": depth, "width": c.width, "model": model.summary(),
            "e0_in_window": c.window[0] <= model.e0 <= c.window[1]}


def cmd_eig(cfg, out: Path, jobs: int) -> dict:
    grid = cfg.grid.build()
    pot, calibrated = _potential(cfg, grid)
    model = build_model(grid, pot, seed=cfg.seed, min_gap=cfg.calibration.min_gap)
    fio.write_field(out / "fields" / "phi0", model.phi0, {"e0": model.e0})
    return {"model": model.summary(), "calibrated_on_the_fly": calibrated}


def cmd_family(cfg, out: Path, jobs: int) -> dict:
    from .boundstate import decay_slope
    from .plotting import plot_family

    lab = build_lab(cfg)
    fam = lab.family
    for i, p in enumerate(fam.points):
        fio.write_field(out / "fields" / f"Q_{i:03d}", p.Q, {"m": p.m, "E": p.E})
    write_columns(out / "m_vs_E.csv", ["m", "E"], fam.m_grid, fam.E_table)
    slope, bound = decay_slope(fam)
    plot_family(fam, out / "family.png")
    return {"manifest": fam.manifest(), "decay_slope": slope, "decay_bound": bound,
            "decay_ok": slope <= bound}


def _perturbed_state(lab: Lab, m0, amplitude, pert):
    b = shell_perturbation(lab, pert.center, pert.width)
    from .boundstate import Q_of_z

    return Q_of_z(lab.family, m0) + b * amplitude


def _write_trajectory(out: Path, name: str, traj: Trajectory):
    traj.to_csv(out / f"{name}.csv")
    traj.to_json(out / f"{name}.json")
    a = traj.arrays()
    n = len(a["z"])
    write_columns(out / f"{name}_t_vs_absz.csv", ["t", "abs_z"], a["t"][:n], np.abs(a["z"]))
    write_columns(out / f"{name}_t_vs_eta_ball.csv", ["t", "eta_L2Ball"], a["t"][:n],
                  a["eta_L2Ball"][:n])


def cmd_evolve(cfg, out: Path, jobs: int) -> dict:
    from .plotting import plot_trajectory

    lab = build_lab(cfg)
    e = cfg.experiments.evolve
    psi0 = _perturbed_state(lab, e.m0, e.amplitude, e.perturbation)
    icfg = cfg.integrator.build(lab.grid, tuple(t for t in e.snapshot_times
                                                if t <= cfg.integrator.t_end))
    psi, traj = evolve(lab.model, lab.spec, lab.family, psi0, icfg)
    _write_trajectory(out, "trajectory", traj)
    for t, eta in traj.snapshots:
        fio.write_field(out / "fields" / f"eta_t{t:g}", eta, {"t": t})
    fio.write_field(out / "fields" / "psi_final", psi, {"t": traj.t[-1]})
    plot_trajectory(traj, out / "trajectory.png")
    summary = traj.summary()
    if traj.failure:
        raise CommandError(traj.failure, EXIT_RUNTIME, {"trajectory": summary})
    return {"trajectory": summary}


def cmd_stability(cfg, out: Path, jobs: int) -> dict:
    from .plotting import plot_scaling, plot_trajectory

    lab = build_lab(cfg)
    s = cfg.experiments.stability
    b = shell_perturbation(lab, s.perturbation.center, s.perturbation.width)
    ic = cfg.integrator
    sponge = ic.build(lab.grid).sponge

    def one(amp):
        return run_stability(lab, s.m0, b, amp, t_end=ic.t_end, dt=ic.dt,
                             sample_every=ic.sample_every, snapshot_times=tuple(s.snapshot_times),
                             sponge=sponge, ball_radius=ic.ball_radius)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        reports = list(pool.map(one, s.amplitudes))
    runs = []
    for amp, rep in zip(s.amplitudes, reports):
        tag = f"s{amp:g}"
        _write_trajectory(out, f"trajectory_{tag}", rep.trajectory)
        plot_trajectory(rep.trajectory, out / f"trajectory_{tag}.png", title=f"s = {amp:g}")
        if rep.eta_plus is not None:
            fio.write_field(out / "fields" / f"eta_plus_{tag}", rep.eta_plus, {"amplitude": amp})
        runs.append(rep.summary())
    amps = np.asarray(s.amplitudes)
    vl1 = np.asarray([r.v_l1 for r in reports])
    exponent = float(np.polyfit(np.log(amps), np.log(vl1), 1)[0]) if len(amps) > 1 else None
    plot_scaling(amps, vl1, out / "v_l1_scaling.png", "int |dz/dt + iEz| dt")
    write_columns(out / "amplitude_vs_v_l1.csv", ["amplitude", "v_l1"], amps, vl1)
    return {"runs": runs, "v_l1_exponent": exponent,
            "tv_ratio": [r.z_variation_tail / r.z_variation_head if r.z_variation_head else None
                         for r in reports],
            "cauchy_decreasing": [r.cauchy_log.get("decreasing") for r in reports]}


def _eta_plus(lab: Lab, e):
    base = project_c(lab.model, Field(lab.grid, np.exp(-((lab.grid.radius - e.center) / e.width) ** 2)))
    return base * (e.h1_norm / norm(base, "H1"))


def cmd_waveop(cfg, out: Path, jobs: int) -> dict:
    from .plotting import plot_cauchy

    w = cfg.experiments.waveop
    lab = build_lab(cfg, w.grid)
    eta_plus = _eta_plus(lab, w.eta_plus)
    rep = run_wave_operator(lab, w.m_inf, eta_plus, w.T_list, dt=w.dt, phase_lock=w.phase_lock,
                            jobs=jobs)
    for T, psi in rep.psi_initial.items():
        fio.write_field(out / "fields" / f"psi0_T{T:g}", psi, {"T": T})
    Ts = [T for T in rep.T_list if T in rep.psi_initial]
    plot_cauchy([f"{a:g}-{b:g}" for a, b in zip(Ts, Ts[1:])], rep.successive, out / "cauchy.png")
    write_columns(out / "T_vs_successive_h1.csv", ["T", "h1_difference"], Ts[1:], rep.successive)
    if rep.failures:
        raise CommandError("some backward runs failed", EXIT_RUNTIME, rep.summary())
    return rep.summary()


def cmd_slowdecay(cfg, out: Path, jobs: int) -> dict:
    from .plotting import plot_bursts

    sd = cfg.experiments.slowdecay
    lab = build_lab(cfg, sd.grid)
    xi0 = make_xi0(lab, sd.ball_radius)
    fio.write_field(out / "fields" / "xi0", xi0)
    f = DECAY_FUNCTIONS[sd.f]
    try:
        plan = plan_slow_decay(lab, xi0, sd.eps, sd.J, f, horizon=sd.horizon, time_step=sd.time_step)
    except PlanFailure as exc:
        raise CommandError(f"plan failed: {exc}", EXIT_RUNTIME,
                           {"achieved_J": exc.achieved, "partial": exc.partial}) from None
    rep = run_slow_decay(lab, plan, sd.m_inf, sd.ball_radius, f=f, dt=sd.dt, margin=sd.margin)
    rows = rep["rows"]
    write_columns(out / "j_vs_distance_ratio.csv", ["j", "ratio_eps"], [r["j"] for r in rows],
                  [r["ratio_eps"] for r in rows])
    plot_bursts(rows, out / "bursts.png")
    return rep


def cmd_validate(cfg, out: Path, jobs: int) -> dict:
    from .validation import run_suite

    grid = cfg.grid.build()
    pot, _ = _potential(cfg, grid)
    model = build_model(grid, pot, seed=cfg.seed, min_gap=cfg.calibration.min_gap)
    result = run_suite(cfg, model, cfg.nonlinearity.build())
    write_columns(out / "checks.csv", ["index", "value", "tolerance", "passed"],
                  range(len(result["checks"])), [c["value"] for c in result["checks"]],
                  [c["tolerance"] for c in result["checks"]], [c["passed"] for c in result["checks"]])
    if not result["passed"]:
        failed = [c["name"] for c in result["checks"] if not c["passed"]]
        raise CommandError(f"failed checks: {failed}", EXIT_CHECKS, result)
    return result


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# -- driver -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlslab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, default=BASELINE_CONFIG,
                   help="scenario YAML file (default: the packaged baseline)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output root directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry by dotted path (repeatable)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for sweeps")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, _ = load_config(args.config, args.override)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    snapshot = dump_config(cfg)
    out = args.out / f"{cfg.run_id}-{args.command}"
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    (out / "config.snapshot").write_text(snapshot)
    report = {"command": args.command, "run_id": cfg.run_id,
              "config_sha256": hashlib.sha256(snapshot.encode()).hexdigest()}
    try:
        report["result"] = HANDLERS[args.command](cfg, out, args.jobs)
        report["status"] = "ok"
        code = EXIT_OK
    except AssumptionViolation as exc:
        report.update(status="error", error=str(exc),
                      lowest_eigenvalues=[float(e) for e in exc.eigenvalues])
        code = EXIT_CONFIG
    except CommandError as exc:
        report.update(status="failed", error=str(exc), result=exc.details)
        code = exc.code
    except ConfigError as exc:
        report.update(status="error", error=f"config error: {exc}")
        code = EXIT_CONFIG
    except Exception as exc:  # leave a marker for any abort
        report.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        (out / "traceback.txt").write_text(traceback.format_exc())
        code = EXIT_RUNTIME
    write_json(out / "report.json", report)
    if code != EXIT_OK:
        marker.write_text(report.get("error", "failed") + "\n")
        print(f"{args.command}: {report.get('error')}", file=sys.stderr)
    else:
        print(f"{args.command}: ok -> {out}")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
