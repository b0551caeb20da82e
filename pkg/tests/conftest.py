import numpy as np
import pytest

from softrl.mdp import SoftConfig, TabularMdp


def make_m1(gamma=0.9):
    """Three states, two actions; state 2 is terminal."""
    P = np.zeros((3, 2, 3))
    P[0, 0] = [0.7, 0.3, 0.0]
    P[0, 1] = [0.1, 0.5, 0.4]
    P[1, 0] = [0.4, 0.2, 0.4]
    P[1, 1] = [0.0, 0.6, 0.4]
    P[2, :, 2] = 1.0
    r = np.array([[1.0, 0.0], [0.5, -1.0], [0.0, 0.0]])
    return TabularMdp(P, r, np.array([1.0, 0.0, 0.0]), gamma, frozenset({2}))


def make_constant(gamma=0.9):
    """One state, two actions, reward 1 everywhere, never terminates."""
    return TabularMdp(np.ones((1, 2, 1)), np.ones((1, 2)), np.ones(1), gamma)


@pytest.fixture
def m1():
    return make_m1()


@pytest.fixture
def m1_cfg():
    return SoftConfig.uniform(3, 2, 0.5)


@pytest.fixture
def constant_mdp():
    return make_constant()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion; printed after the run."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
