import numpy as np
import pytest

from crbm.bench import HertzConfig, ParameterSets, build_hertz_model
from crbm.nitsche import FrictionModel
from crbm.workflow import run_offline

TRESCA_S = 0.1


@pytest.fixture(scope="session")
def coarse_model():
    return build_hertz_model(HertzConfig())


@pytest.fixture(scope="session")
def tresca_model():
    return build_hertz_model(HertzConfig(friction=FrictionModel.tresca(TRESCA_S)))


@pytest.fixture(scope="session")
def standard_sets():
    return ParameterSets.standard()


@pytest.fixture(scope="session")
def offline_none(coarse_model, standard_sets):
    return run_offline(coarse_model, standard_sets)


@pytest.fixture(scope="session")
def offline_tresca(tresca_model, standard_sets):
    return run_offline(tresca_model, standard_sets)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
