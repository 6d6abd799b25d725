import numpy as np
import pytest

from rtsuperconv.mesh import Mesh, generate_uniform
from rtsuperconv.problem import manufactured_problem
from rtsuperconv.solver import solve_problem


@pytest.fixture(scope="session")
def problem():
    """-Laplace u + u = f with u = sin(2 pi x) sin(pi y), u = 0 on the boundary."""
    return manufactured_problem()


@pytest.fixture(scope="session")
def uniform8():
    return generate_uniform(8)


@pytest.fixture(scope="session")
def solution8(uniform8, problem):
    return solve_problem(uniform8, problem)


@pytest.fixture
def reference_mesh():
    return Mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Record a one-line verdict shown in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def log(number, passed, message):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {message}"
        lines.append(line)
        print(line)
        return passed

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
