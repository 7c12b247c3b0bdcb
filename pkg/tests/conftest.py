import numpy as np
import pytest

import helpers
from multiband_loc.channel import ScenarioConfig, default_bands, gen_scenario
from multiband_loc.fingerprint import build_database


@pytest.fixture(scope="session")
def bands():
    return default_bands()


@pytest.fixture(scope="session")
def small_bands():
    return default_bands(16)


@pytest.fixture(scope="session")
def scenario():
    return gen_scenario(ScenarioConfig())


@pytest.fixture(scope="session")
def tiny_db(scenario, small_bands):
    """Eight noisy samples per RP and TP on 16-subcarrier bands."""
    return build_database(scenario, small_bands, 8, 30.0, 3, roles=("rp", "tp"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if helpers.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(helpers.VERDICTS, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
