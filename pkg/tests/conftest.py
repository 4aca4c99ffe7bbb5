import numpy as np
import pytest
from threadpoolctl import threadpool_limits


@pytest.fixture(scope="session", autouse=True)
def single_threaded_blas():
    # tiny matrices everywhere; BLAS threading only adds overhead and noise
    with threadpool_limits(1):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
