import numpy as np
import pytest

from jointclust.losses import LossSpec

ALL_LOSSES = (
    LossSpec.quadratic(),
    LossSpec.absolute(),
    LossSpec.huber(1.0),
    LossSpec.logcosh(),
    LossSpec.quantile(0.75),
    LossSpec.expectile(0.9),
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
