import numpy as np
import pytest

from noma_ee.config import parse_config, shipped_config
from noma_ee.core import Scenario, SystemParams, UserProfile, dbm_to_watts
from noma_ee.optimizer import EEProblem, dinkelbach_solve


@pytest.fixture(scope="session")
def params():
    return SystemParams.from_table()


@pytest.fixture(scope="session")
def table1_cfg():
    return parse_config(shipped_config("table1"))


@pytest.fixture(scope="session")
def table1(table1_cfg):
    return table1_cfg.scenario


@pytest.fixture(scope="session")
def table1_solution(table1):
    problem = EEProblem(table1)
    return problem, dinkelbach_solve(problem)


def make_scenario(mean_burst_bits=150.0, delays=(0.01, 0.02, 0.03), distances=(300.0, 600.0, 900.0), p=0.6):
    params = SystemParams.from_table()
    profiles = [UserProfile(d, 4.0, p, mean_burst_bits, dbm_to_watts(10.0), dm, 0.1)
                for d, dm in zip(distances, delays)]
    return Scenario(params, tuple(profiles))


@pytest.fixture(scope="session")
def light_solution():
    """L=100 bits: the nearest user is not QoS-tight at the optimum."""
    problem = EEProblem(make_scenario(100.0))
    return problem, dinkelbach_solve(problem)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def emit(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
