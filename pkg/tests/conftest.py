import numpy as np
import pytest

from lfperf.core import PlatformParams, WorkloadParams

# canonical configuration used across the suite
CFG_A_PLATFORM = PlatformParams(P=8, cc=1.5, rc=1.0)
CFG_A_WORKLOAD = WorkloadParams(cw_mean=4.0, pw_mean=100.0)


@pytest.fixture
def platform():
    return CFG_A_PLATFORM


@pytest.fixture
def workload():
    return CFG_A_WORKLOAD


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[name])
