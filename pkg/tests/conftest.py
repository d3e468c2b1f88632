import numpy as np
import pytest

from seqtest.convexgeom import Box
from seqtest.schemes import SchemeKind
from seqtest.sequential import HypothesisFamily, ScheduleConfig, build_sequential

DELTA = 0.1


def two_box(delta=DELTA, n=2):
    lower, upper = np.zeros(n), np.ones(n)
    lower[0], upper[0] = delta, 1 + delta
    return HypothesisFamily([Box(lower, upper), Box(-np.ones(n), np.zeros(n))], [1, 2],
                            SchemeKind.gaussian(n))


def four_squares():
    sq = lambda lo, hi: Box(lo, hi)
    return HypothesisFamily([sq([0.01, 0.01], [1, 1]), sq([-1, 0.01], [-0.01, 1]),
                             sq([-1, -1], [-0.01, -0.01]), sq([0.01, -1], [1, -0.01])],
                            [1, 2, 3, 4], SchemeKind.gaussian(2))


@pytest.fixture(scope="session")
def two_box_family():
    return two_box()


@pytest.fixture(scope="session")
def two_box_test(two_box_family):
    return build_sequential(two_box_family, ScheduleConfig(0.01))


@pytest.fixture(scope="session")
def four_squares_family():
    return four_squares()


@pytest.fixture(scope="session")
def four_squares_test(four_squares_family):
    return build_sequential(four_squares_family, ScheduleConfig(0.01, S=20))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
