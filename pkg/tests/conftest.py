import numpy as np
import pytest

from trajfpca import FitConfig, default_spec, fit, simulate_cohort, simulate_groups
from trajfpca.smooth import Bandwidth

# fixed bandwidths keep model-level tests fast; auto selection has its own tests
FAST = FitConfig(bandwidth_mean=Bandwidth.fixed(1.5), bandwidth_cov=Bandwidth.fixed(2.5))


@pytest.fixture(scope="session")
def cohort():
    return simulate_cohort(default_spec(), 200, seed=11)


@pytest.fixture(scope="session")
def model(cohort):
    return fit(cohort, FAST)


@pytest.fixture(scope="session")
def grouped():
    spec = default_spec()
    return simulate_groups([(spec, 40, "a"), (spec, 40, "b"), (spec, 40, "c")], seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
