import numpy as np
import pytest

from ntkpde.domain import DomainSpec, build_grid, default_eta
from ntkpde.kernel import KernelSetup, MCKernelConfig
from ntkpde.network import Architecture, InitDistribution, get_activation
from ntkpde.operator import make_solution, manufactured_problem, neg_laplace


@pytest.fixture(scope="session")
def unit_interval():
    return DomainSpec.interval(0.0, 1.0)


@pytest.fixture(scope="session")
def poisson1d(unit_interval):
    u = make_solution("sine", unit_interval)
    return manufactured_problem(unit_interval, neg_laplace(1), u)


@pytest.fixture(scope="session")
def arch1d(unit_interval):
    return Architecture(get_activation("tanh"), default_eta(unit_interval))


@pytest.fixture(scope="session")
def grid16(unit_interval):
    return build_grid(unit_interval, 16)


@pytest.fixture(scope="session")
def small_setup(unit_interval):
    """CI-scale kernel budget."""
    return KernelSetup(get_activation("tanh"), default_eta(unit_interval), neg_laplace(1),
                       InitDistribution(), MCKernelConfig(10_000, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from tests_acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
