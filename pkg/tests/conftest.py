import numpy as np
import pytest

from lockin.cli import run_estimate
from lockin.config import RunConfig
from lockin.family import FamilyConfig, continue_family
from lockin.gauge import build_gauge
from lockin.model import default_inverter_model

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    def _report(number, name, ok, detail=""):
        line = f"criterion {number:2d} {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


@pytest.fixture(scope="session")
def model_I():
    return default_inverter_model("version-I")


@pytest.fixture(scope="session")
def model_II():
    return default_inverter_model("version-II")


@pytest.fixture(scope="session")
def gauge_I(model_I):
    return build_gauge(model_I.A, 0.5)


@pytest.fixture(scope="session")
def small_family(model_I, gauge_I):
    """A few low levels of the version-I family, with gradients."""
    return continue_family(gauge_I, model_I, FamilyConfig(V_max=20.0, max_ratio=2.0))


def _estimate(tmp_path_factory, preset):
    out = tmp_path_factory.mktemp(f"estimate-{preset}")
    cfg = RunConfig().with_overrides(preset=preset)
    est = run_estimate(cfg, str(out))
    return est, out


@pytest.fixture(scope="session")
def fitted_I(tmp_path_factory):
    """Full version-I pipeline run through the CLI driver: ``(estimator, artifact_dir)``."""
    return _estimate(tmp_path_factory, "version-I")


@pytest.fixture(scope="session")
def fitted_II(tmp_path_factory):
    return _estimate(tmp_path_factory, "version-II")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
