"""Scenario configuration: YAML files validated against a strict schema.

Unknown keys are rejected so that a misspelled tolerance or parameter name
fails loudly instead of silently falling back to a default.
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field as PField, ValidationError, model_validator

from .evolve import IntegratorConfig, Sponge
from .grid import CartesianGrid, RadialGrid
from .linear import GaussianWell, TabulatedPotential
from .nonlin import GaussianKernel, HartreeTerm, NonlinearitySpec, PowerLawKernel, PowerTerm

__all__ = [
    "ScenarioConfig",
    "ConfigError",
    "load_config",
    "apply_overrides",
    "DEFAULT_TOLERANCES",
    "dump_config",
    "BASELINE_CONFIG",
]

BASELINE_CONFIG = Path(__file__).parent / "configs" / "baseline.yaml"


class ConfigError(ValueError):
    """Schema or override error; the message lists offending field paths."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RadialGridCfg(_Strict):
    kind: Literal["radial"] = "radial"
    n: int = PField(2047, ge=4)
    r_max: float = PField(40.0, gt=0)

    def build(self):
        return RadialGrid(self.n, self.r_max)


class CartesianGridCfg(_Strict):
    kind: Literal["cartesian"]
    n: int = PField(64, ge=4)
    box: float = PField(32.0, gt=0)

    def build(self):
        return CartesianGrid(self.n, self.box)


GridCfg = Annotated[Union[RadialGridCfg, CartesianGridCfg], PField(discriminator="kind")]


class GaussianWellCfg(_Strict):
    kind: Literal["gaussian_well"] = "gaussian_well"
    depth: float = PField(gt=0)
    width: float = PField(2.0, gt=0)

    def build(self, grid=None):
        return GaussianWell(self.depth, self.width)


class TabulatedCfg(_Strict):
    kind: Literal["tabulated"]
    constant: Optional[float] = None
    file: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.constant is None) == (self.file is None):
            raise ValueError("give exactly one of 'constant' or 'file'")
        return self

    def build(self, grid):
        if self.constant is not None:
            return TabulatedPotential(np.full(grid.shape, float(self.constant)))
        return TabulatedPotential(np.load(self.file))


PotentialCfg = Annotated[Union[GaussianWellCfg, TabulatedCfg], PField(discriminator="kind")]


class CalibrationCfg(_Strict):
    width: float = PField(2.0, gt=0)
    target: float = -0.3
    window: tuple[float, float] = (-0.5, -0.1)
    tol: float = 1e-6
    min_gap: float = 0.05


class PowerTermCfg(_Strict):
    kind: Literal["power"] = "power"
    coef: float
    power: float = PField(gt=1)


class GaussianKernelCfg(_Strict):
    kind: Literal["gaussian"] = "gaussian"
    amplitude: float
    width: float = PField(gt=0)


class PowerLawKernelCfg(_Strict):
    kind: Literal["power_law"]
    amplitude: float
    exponent: float = PField(gt=0, lt=3)


class HartreeTermCfg(_Strict):
    kind: Literal["hartree"]
    kernel: Annotated[Union[GaussianKernelCfg, PowerLawKernelCfg], PField(discriminator="kind")]


TermCfg = Annotated[Union[PowerTermCfg, HartreeTermCfg], PField(discriminator="kind")]


class NonlinearityCfg(_Strict):
    terms: list[TermCfg] = PField(default_factory=lambda: [PowerTermCfg(coef=-1.0, power=3.0)])

    def build(self) -> NonlinearitySpec:
        out = []
        for t in self.terms:
            if isinstance(t, PowerTermCfg):
                out.append(PowerTerm(t.coef, t.power))
            elif isinstance(t.kernel, GaussianKernelCfg):
                out.append(HartreeTerm(GaussianKernel(t.kernel.amplitude, t.kernel.width)))
            else:
                out.append(HartreeTerm(PowerLawKernel(t.kernel.amplitude, t.kernel.exponent)))
        return NonlinearitySpec(out)


class FamilyCfg(_Strict):
    m_max: float = PField(0.4, gt=0)
    n_samples: int = PField(33, ge=17)


class SpongeCfg(_Strict):
    start_fraction: float = PField(0.8, gt=0, lt=1)
    strength: float = PField(1.0, ge=0)


class IntegratorCfg(_Strict):
    dt: float = PField(0.005, gt=0)
    t_end: float = PField(200.0, ge=0)
    sample_every: int = PField(20, ge=1)
    sponge: Optional[SpongeCfg] = SpongeCfg()
    direction: Literal["forward", "backward"] = "forward"
    ball_radius: float = PField(10.0, gt=0)

    def build(self, grid, snapshot_times=()) -> IntegratorConfig:
        sponge = None
        if self.sponge is not None:
            extent = grid.r_max if grid.kind == "radial" else 0.5 * grid.box
            sponge = Sponge(self.sponge.start_fraction * extent, self.sponge.strength)
        return IntegratorConfig(dt=self.dt, t_end=self.t_end, sample_every=self.sample_every,
                                sponge=sponge, direction=self.direction,
                                ball_radius=self.ball_radius, snapshot_times=snapshot_times)


class PerturbationCfg(_Strict):
    kind: Literal["gaussian_shell"] = "gaussian_shell"
    center: float = 3.0
    width: float = PField(2.0, gt=0)


class EvolveCfg(_Strict):
    m0: float = PField(0.1, ge=0)
    amplitude: float = 0.05
    perturbation: PerturbationCfg = PerturbationCfg()
    snapshot_times: list[float] = [25.0, 50.0, 100.0, 200.0]


class StabilityCfg(_Strict):
    m0: float = PField(0.1, ge=0)
    amplitudes: list[float] = [0.05, 0.025, 0.0125]
    perturbation: PerturbationCfg = PerturbationCfg()
    snapshot_times: list[float] = [25.0, 50.0, 100.0, 200.0]


class EtaPlusCfg(_Strict):
    center: float = 3.0
    width: float = PField(2.0, gt=0)
    h1_norm: float = PField(0.1, ge=0)


class WaveOpCfg(_Strict):
    grid: GridCfg = RadialGridCfg(n=2047, r_max=240.0)
    m_inf: float = PField(0.1, ge=0)
    eta_plus: EtaPlusCfg = EtaPlusCfg()
    T_list: list[float] = [20.0, 40.0, 80.0]
    dt: float = PField(0.00125, gt=0)
    phase_lock: Literal["scheme", "exact", "none"] = "scheme"


class SlowDecayCfg(_Strict):
    grid: GridCfg = RadialGridCfg(n=2047, r_max=240.0)
    m_inf: float = PField(0.1, ge=0)
    eps: float = PField(0.02, gt=0)
    J: int = PField(3, ge=1)
    f: Literal["inv_log", "inv_square", "inv_linear"] = "inv_log"
    ball_radius: float = PField(5.0, gt=0)
    horizon: float = PField(60.0, gt=0)
    time_step: float = PField(0.5, gt=0)
    dt: float = PField(0.00125, gt=0)
    margin: float = PField(5.0, gt=0)


class ExperimentsCfg(_Strict):
    evolve: EvolveCfg = EvolveCfg()
    stability: StabilityCfg = StabilityCfg()
    waveop: WaveOpCfg = WaveOpCfg()
    slowdecay: SlowDecayCfg = SlowDecayCfg()


DEFAULT_TOLERANCES = {
    "eig_residual": 1e-10,
    "phi0_norm": 1e-12,
    "dense_e0": 1e-9,
    "dense_alignment": 1e-9,
    "bound_residual_rel": 1e-8,
    "bound_orth": 1e-11,
    "gauge_dq_rel": 1e-8,
    "invariance_rel": 1e-6,
    "h_symmetry": 1e-9,
    "linearization_order": 1.9,
    "g_gauge": 1e-12,
    "decompose_z": 1e-9,
    "jacobian_origin": 1e-6,
    "mass_drift_rel": 1e-10,
    "hamiltonian_order": 1.9,
    "reversibility": 1e-8,
    "self_adjoint": 1e-10,
    "parseval": 1e-12,
}


class ScenarioConfig(_Strict):
    run_id: str = "baseline"
    seed: int = 0
    grid: GridCfg = RadialGridCfg()
    potential: Optional[PotentialCfg] = None
    calibration: CalibrationCfg = CalibrationCfg()
    nonlinearity: NonlinearityCfg = NonlinearityCfg()
    family: FamilyCfg = FamilyCfg()
    integrator: IntegratorCfg = IntegratorCfg()
    experiments: ExperimentsCfg = ExperimentsCfg()
    tolerances: dict[str, float] = PField(default_factory=dict)

    @model_validator(mode="after")
    def _known_tolerances(self):
        unknown = sorted(set(self.tolerances) - set(DEFAULT_TOLERANCES))
        if unknown:
            raise ValueError(f"unknown tolerance names: {unknown}")
        return self

    def tolerance(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def _set_path(tree: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {dotted}: '{k}' is not a mapping")
        node = nxt
    node[keys[-1]] = value


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply 'a.b.c=value' overrides; values are parsed as YAML scalars or lists."""
    raw = dict(raw or {})
    raw = yaml.safe_load(yaml.safe_dump(raw))  # deep copy
    for ov in overrides or ():
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} must look like key=value")
        key, value = ov.split("=", 1)
        _set_path(raw, key.strip(), yaml.safe_load(value))
    return raw


def validate_config(raw: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(raw or {})
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path=None, overrides=()) -> tuple[ScenarioConfig, dict]:
    """Read, override and validate a config; returns (config, raw tree after overrides)."""
    raw = {}
    if path is not None:
        text = Path(path).read_text()
        raw = yaml.safe_load(text) or {}
        if not isinstance(raw, dict):
            raise ConfigError("<root>: config file must contain a mapping")
    raw = apply_overrides(raw, overrides)
    return validate_config(raw), raw


def dump_config(cfg: ScenarioConfig) -> str:
    """Canonical YAML of the fully resolved config (defaults filled in)."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True, default_flow_style=False)
