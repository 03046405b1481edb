import numpy as np
import pytest
from hypothesis import settings

from vdnewton.mesh import unit_square
from vdnewton.problems import make_problem

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def mesh3():
    return unit_square(3)


@pytest.fixture(scope="session")
def dirichlet3(mesh3):
    return make_problem("dirichlet", 1e-3, mesh3)


@pytest.fixture(scope="session")
def neumann3(mesh3):
    return make_problem("neumann", 1.0, mesh3)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
