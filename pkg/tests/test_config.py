import pytest
import yaml

from nlslab.config import (BASELINE_CONFIG, DEFAULT_TOLERANCES, ConfigError, apply_overrides,
                           dump_config, load_config, validate_config)
from nlslab.nonlin import HartreeTerm, PowerLawKernel


def test_shipped_baseline_validates():
    cfg, raw = load_config(BASELINE_CONFIG)
    assert cfg.grid.n == 2047 and cfg.grid.r_max == 40.0
    assert cfg.potential.depth == pytest.approx(1.7909417152404785)
    assert cfg.experiments.slowdecay.eps == 0.02


def test_defaults_fill_an_empty_config():
    cfg = validate_config({})
    assert cfg.potential is None  # calibration requested
    assert cfg.tolerance("eig_residual") == DEFAULT_TOLERANCES["eig_residual"]


def test_unknown_keys_report_field_paths():
    with pytest.raises(ConfigError, match="integrator.dtt"):
        validate_config({"integrator": {"dtt": 0.1}})
    with pytest.raises(ConfigError, match="unknown tolerance"):
        validate_config({"tolerances": {"eig_residul": 1e-3}})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError, match="integrator.dt"):
        validate_config({"integrator": {"dt": -1}})
    with pytest.raises(ConfigError):
        validate_config({"potential": {"kind": "tabulated", "constant": 0, "file": "x.npy"}})
    with pytest.raises(ConfigError):
        validate_config({"nonlinearity": {"terms": [{"kind": "hartree",
                                                     "kernel": {"kind": "power_law",
                                                                "amplitude": 1, "exponent": 3.5}}]}})


def test_overrides_parse_yaml_values():
    raw = apply_overrides({"integrator": {"dt": 0.005}},
                          ["integrator.dt=0.01", "experiments.waveop.T_list=[10, 20]",
                           "tolerances.parseval=1e-9", "potential={kind: tabulated, constant: 0}"])
    cfg = validate_config(raw)
    assert cfg.integrator.dt == 0.01
    assert cfg.experiments.waveop.T_list == [10.0, 20.0]
    assert cfg.tolerance("parseval") == 1e-9
    assert cfg.potential.constant == 0
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no_equals_sign"])
    with pytest.raises(ConfigError):
        apply_overrides({"integrator": 3}, ["integrator.dt=1"])


def test_nonlinearity_builder_and_hartree_terms():
    cfg = validate_config({"nonlinearity": {"terms": [
        {"kind": "power", "coef": -1, "power": 3},
        {"kind": "hartree", "kernel": {"kind": "power_law", "amplitude": 0.5, "exponent": 1}}]}})
    spec = cfg.nonlinearity.build()
    assert spec.has_hartree
    assert spec.terms[1] == HartreeTerm(PowerLawKernel(0.5, 1.0))


def test_dump_is_canonical_and_reloadable(tmp_path):
    cfg, _ = load_config(BASELINE_CONFIG, ["seed=7"])
    text = dump_config(cfg)
    assert text == dump_config(validate_config(yaml.safe_load(text)))
    p = tmp_path / "c.yaml"
    p.write_text(text)
    assert load_config(p)[0] == cfg


def test_non_mapping_file_rejected(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p)
