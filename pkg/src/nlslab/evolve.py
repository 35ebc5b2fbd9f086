"""Strang split-step integration of i psi_t = (-Delta + V) psi + g(psi) with diagnostics."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy.integrate import trapezoid

from .boundstate import BoundStateFamily, E_of_z, OutOfFamilyError
from .grid import Field, L2Ball, gradient_norm_sq, norm
from .linear import LinearModel, linear_propagate, project_c
from .modulation import DecompositionError, SingularSystemError, decompose, modulation_velocity
from .nonlin import HartreeTerm, NonlinearitySpec, G_value, PowerTerm, convolve

log = logging.getLogger(__name__)

__all__ = [
    "Sponge",
    "IntegratorConfig",
    "Trajectory",
    "EvolutionError",
    "step",
    "evolve",
    "mass",
    "hamiltonian",
    "extract_scattering",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ["t", "re_z", "im_z", "abs_z", "E", "re_v", "im_v", "eta_L2", "eta_L6", "eta_H1",
               "eta_W16", "eta_L2Ball", "mass", "hamiltonian", "hc_residual"]


class EvolutionError(RuntimeError):
    """Non-finite state; ``last_state`` holds the last finite field and ``time`` its time."""

    def __init__(self, message, last_state=None, time=None):
        super().__init__(message)
        self.last_state = last_state
        self.time = time


@dataclass(frozen=True)
class Sponge:
    """Absorbing potential -i W(r), W rising smoothly from 0 at start_radius to strength at the edge."""

    start_radius: float
    strength: float = 1.0

    def profile(self, grid) -> np.ndarray:
        extent = grid.r_max if grid.kind == "radial" else 0.5 * grid.box
        if not self.start_radius < extent:
            raise ValueError("sponge start_radius must lie inside the domain")
        s = np.clip((grid.radius - self.start_radius) / (extent - self.start_radius), 0.0, 1.0)
        return self.strength * np.sin(0.5 * np.pi * s) ** 2

    @classmethod
    def default(cls, grid, strength: float = 1.0) -> "Sponge":
        extent = grid.r_max if grid.kind == "radial" else 0.5 * grid.box
        return cls(0.8 * extent, strength)


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.005
    t_end: float = 10.0
    sample_every: int = 20
    sponge: Optional[Sponge] = None
    direction: str = "forward"
    ball_radius: float = 10.0
    snapshot_times: tuple = ()
    decompose: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive; use direction='backward' to run backward")
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))

    @property
    def signed_dt(self) -> float:
        return self.dt if self.direction == "forward" else -self.dt


# -- stepping --------------------------------------------------------------------


class _Stepper:
    """Array-level Strang stepper with precomputed multipliers."""

    def __init__(self, model: LinearModel, spec: NonlinearitySpec, dt: float,
                 sponge: Optional[Sponge] = None):
        spec.check_grid(model.grid)
        self.grid = model.grid
        self.spec = spec
        self.dt = dt
        pot = model.V.astype(complex)
        if sponge is not None:
            pot = pot - 1j * sponge.profile(self.grid)
        self.half_lin = np.exp(-0.5j * dt * pot)
        self.kin = np.exp(-1j * dt * self.grid.k2)
        self.powers = [t for t in spec.terms if isinstance(t, PowerTerm)]
        self.hartree = [t for t in spec.terms if isinstance(t, HartreeTerm)]

    def _nonlinear_phase(self, v: np.ndarray) -> np.ndarray:
        a = np.abs(v)
        N = np.zeros(a.shape)
        for t in self.powers:
            N += t.coef * a ** (t.power - 1)
        for t in self.hartree:
            N += convolve(t.kernel, self.grid, a * a)
        return np.exp(-0.5j * self.dt * N)

    def _half(self, v: np.ndarray) -> np.ndarray:
        if self.spec.terms:
            return v * self.half_lin * self._nonlinear_phase(v)
        return v * self.half_lin

    def _kinetic(self, v: np.ndarray) -> np.ndarray:
        g = self.grid
        if g.kind == "radial":
            u = g.r * v
            c = sfft.dst(u.real, type=1, norm="ortho") + 1j * sfft.dst(u.imag, type=1, norm="ortho")
            c *= self.kin
            u = sfft.dst(c.real, type=1, norm="ortho") + 1j * sfft.dst(c.imag, type=1, norm="ortho")
            return u / g.r
        return sfft.ifftn(self.kin * sfft.fftn(v))

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self._half(self._kinetic(self._half(v)))


def step(model: LinearModel, spec: NonlinearitySpec, psi: Field, dt: float,
         sponge: Optional[Sponge] = None) -> Field:
    """One Strang step of size dt (dt < 0 steps backward)."""
    out = _Stepper(model, spec, dt, sponge)(psi.values)
    if not np.all(np.isfinite(out)):
        raise EvolutionError("non-finite values after step", last_state=psi, time=None)
    return Field(psi.grid, out)


# -- conserved quantities -------------------------------------------------------


def mass(psi: Field) -> float:
    return float(np.sum(psi.grid.weights * np.abs(psi.values) ** 2))


def hamiltonian(model: LinearModel, spec: NonlinearitySpec, psi: Field) -> float:
    """1/2 int (|grad psi|^2 + V |psi|^2) dx + G(psi)."""
    pot = float(np.sum(psi.grid.weights * model.V * np.abs(psi.values) ** 2))
    return 0.5 * (gradient_norm_sq(psi) + pot) + G_value(spec, psi)


# -- trajectories -------------------------------------------------------------------


@dataclass
class Trajectory:
    t: list = field(default_factory=list)
    z: list = field(default_factory=list)
    E: list = field(default_factory=list)
    v: list = field(default_factory=list)
    eta_norms: dict = field(default_factory=lambda: {k: [] for k in
                                                     ("L2", "L6", "H1", "W16", "L2Ball")})
    mass: list = field(default_factory=list)
    hamiltonian: list = field(default_factory=list)
    hc_residual: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (t, eta) pairs
    psi_snapshots: list = field(default_factory=list)  # (t, psi) pairs
    failure: Optional[str] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def arrays(self) -> dict:
        return {
            "t": np.asarray(self.t), "z": np.asarray(self.z, dtype=complex),
            "E": np.asarray(self.E), "v": np.asarray(self.v, dtype=complex),
            "mass": np.asarray(self.mass), "hamiltonian": np.asarray(self.hamiltonian),
            "hc_residual": np.asarray(self.hc_residual),
            **{f"eta_{k}": np.asarray(v) for k, v in self.eta_norms.items()},
        }

    @property
    def v_l1(self) -> float:
        """Trapezoid approximation of int |dz/dt + iEz| dt."""
        n = len(self.v)
        if n < 2:
            return 0.0
        return float(trapezoid(np.abs(np.asarray(self.v)), np.asarray(self.t[:n])))

    @property
    def w16_sq_sum(self) -> float:
        """Sum of dt * ||eta||_{W16}^2 over samples."""
        w = np.asarray(self.eta_norms.get("W16", []))
        if len(w) < 2:
            return 0.0
        t = np.asarray(self.t[: len(w)])
        return float(np.sum(np.abs(np.diff(t)) * w[1:] ** 2))

    def rows(self):
        nan = float("nan")
        for i, t in enumerate(self.t):
            z = self.z[i] if i < len(self.z) else complex(nan, nan)
            v = self.v[i] if i < len(self.v) else complex(nan, nan)
            yield [t, z.real, z.imag, abs(z), self.E[i] if i < len(self.E) else nan, v.real, v.imag,
                   *[self.eta_norms[k][i] if i < len(self.eta_norms[k]) else nan
                     for k in ("L2", "L6", "H1", "W16", "L2Ball")],
                   self.mass[i], self.hamiltonian[i],
                   self.hc_residual[i] if i < len(self.hc_residual) else nan]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow([f"{float(x):.17g}" for x in row])

    def summary(self) -> dict:
        out = {
            "samples": len(self.t),
            "t_first": self.t[0] if self.t else None,
            "t_last": self.t[-1] if self.t else None,
            "v_l1": self.v_l1,
            "w16_sq_sum": self.w16_sq_sum,
            "failure": self.failure,
            **self.meta,
        }
        if self.mass:
            m0 = self.mass[0]
            out["mass_drift_rel"] = float(max(abs(m - m0) for m in self.mass) / m0) if m0 else 0.0
            h0 = self.hamiltonian[0]
            out["hamiltonian_drift"] = float(max(abs(h - h0) for h in self.hamiltonian))
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"columns": CSV_COLUMNS, "summary": self.summary(),
                       "rows": [[float(x) for x in r] for r in self.rows()]}, fh, indent=1,
                      sort_keys=True)


def _record(traj, model, spec, family, psi, t, cfg, zguess):
    traj.t.append(float(t))
    traj.mass.append(mass(psi))
    traj.hamiltonian.append(hamiltonian(model, spec, psi))
    if family is None or not cfg.decompose:
        return None
    st = decompose(family, psi)
    eta = st.eta
    traj.z.append(st.z)
    traj.E.append(E_of_z(family, st.z))
    traj.v.append(modulation_velocity(family, model, spec, st.z, eta))
    traj.hc_residual.append(st.hc_residual)
    n = traj.eta_norms
    n["L2"].append(norm(eta))
    n["L6"].append(norm(eta, "L6"))
    n["H1"].append(norm(eta, "H1"))
    n["W16"].append(norm(eta, "W16"))
    n["L2Ball"].append(norm(eta, L2Ball(cfg.ball_radius)))
    return st


def evolve(model: LinearModel, spec: NonlinearitySpec, family: Optional[BoundStateFamily],
           psi0: Field, cfg: IntegratorConfig) -> tuple[Field, Trajectory]:
    """Integrate from psi0 over [0, t_end] (or backward) with periodic diagnostics.

    Sample times are recorded as signed times (negative for backward runs).
    A decomposition failure truncates the trajectory and sets ``failure``.
    """
    if cfg.sponge is not None and cfg.direction == "backward":
        raise ValueError("backward runs must be reversible; the sponge is not allowed")
    extent = model.grid.r_max if model.grid.kind == "radial" else 0.5 * model.grid.box
    if cfg.sponge is None and cfg.t_end > 0.5 * extent and cfg.direction == "forward":
        log.info("t_end %.4g exceeds the radiation transit time without a sponge", cfg.t_end)
    dt = cfg.signed_dt
    nsteps = int(round(cfg.t_end / cfg.dt))
    stepper = _Stepper(model, spec, dt, cfg.sponge)
    traj = Trajectory(meta={"dt": cfg.dt, "direction": cfg.direction, "t_end": cfg.t_end,
                            "sample_every": cfg.sample_every,
                            "sponge": asdict(cfg.sponge) if cfg.sponge else None})
    snap_steps = {int(round(abs(ts) / cfg.dt)): ts for ts in cfg.snapshot_times}
    v = psi0.values
    psi = psi0
    try:
        st = _record(traj, model, spec, family, psi, 0.0, cfg, None)
    except (DecompositionError, OutOfFamilyError, SingularSystemError) as exc:
        raise DecompositionError(f"initial state cannot be decomposed: {exc}") from exc
    if 0 in snap_steps:
        traj.psi_snapshots.append((0.0, psi))
        if st is not None:
            traj.snapshots.append((0.0, st.eta))
    for k in range(1, nsteps + 1):
        new = stepper(v)
        if not np.all(np.isfinite(new)):
            raise EvolutionError(f"non-finite state at step {k}", last_state=Field(psi0.grid, v),
                                 time=(k - 1) * dt)
        v = new
        if k % cfg.sample_every == 0 or k == nsteps or k in snap_steps:
            psi = Field(psi0.grid, v)
            t = k * dt
            try:
                st = _record(traj, model, spec, family, psi, t, cfg, None)
            except (DecompositionError, OutOfFamilyError, SingularSystemError) as exc:
                traj.failure = f"decomposition failed at t = {t:.6g}: {exc}"
                log.warning(traj.failure)
                traj.t.pop()
                traj.mass.pop()
                traj.hamiltonian.pop()
                return psi, traj
            if k in snap_steps:
                traj.psi_snapshots.append((t, psi))
                if st is not None:
                    traj.snapshots.append((t, st.eta))
    psi = Field(psi0.grid, v)
    if cfg.sponge is not None and traj.mass:
        traj.meta["absorbed_mass"] = traj.mass[0] - traj.mass[-1]
    return psi, traj


# -- scattering -----------------------------------------------------------------------


def extract_scattering(model: LinearModel, snapshots, warn: bool = True):
    """xi(t_k) = e^{-i t_k (Delta - V)} P_c eta(t_k) and their successive H1 differences.

    ``snapshots`` is a sequence of (t_k, eta_k) with increasing t_k.  Returns
    (eta_plus, log) where eta_plus is the last xi.
    """
    snaps = list(snapshots)
    if not snaps:
        raise ValueError("no snapshots")
    times = [float(t) for t, _ in snaps]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("snapshot times must increase")
    xis = [linear_propagate(model, project_c(model, eta), -t) for t, eta in snaps]
    diffs = [norm(b - a, "H1") for a, b in zip(xis, xis[1:])]
    decreasing = all(b < a for a, b in zip(diffs, diffs[1:]))
    if warn and len(diffs) > 1 and not decreasing:
        warnings.warn("scattering Cauchy differences are not decreasing at this horizon",
                      RuntimeWarning, stacklevel=2)
    log_ = {"times": times, "cauchy_h1": diffs, "decreasing": decreasing,
            "xi_h1": [norm(x, "H1") for x in xis]}
    return xis[-1], log_
