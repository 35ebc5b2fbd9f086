import numpy as np
import pytest

from nlslab.cli import build_lab
from nlslab.config import BASELINE_CONFIG, load_config
from nlslab.grid import RadialGrid
from nlslab.linear import build_model
from nlslab.nonlin import NonlinearitySpec, PowerTerm

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def record():
    def _record(key: str, ok: bool, detail: str) -> None:
        ACCEPTANCE[key] = (bool(ok), detail)
        print(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")

    return _record


@pytest.fixture(scope="session")
def cfg():
    return load_config(BASELINE_CONFIG)[0]


@pytest.fixture(scope="session")
def lab(cfg):
    """Baseline radial model (n = 2047, r_max = 40), cubic focusing term and family."""
    return build_lab(cfg)


@pytest.fixture(scope="session")
def wide_lab(cfg):
    """Same scenario on the r_max = 240 grid used for backward runs."""
    return build_lab(cfg, cfg.experiments.waveop.grid)


@pytest.fixture(scope="session")
def small_model(cfg):
    grid = RadialGrid(255, 40.0)
    return build_model(grid, cfg.potential.build(grid))


@pytest.fixture(scope="session")
def cubic():
    return NonlinearitySpec([PowerTerm(-1.0, 3.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
