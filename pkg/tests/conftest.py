import sys

import numpy as np
import pytest

from xmodal_kd import nn_core


@pytest.fixture(params=sorted(nn_core.BACKENDS))
def backend(request):
    """Run the test once per available kernel backend."""
    previous = nn_core.get_backend()
    nn_core.set_backend(request.param)
    yield request.param
    nn_core.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_net(rng, dims=(5, 7, 6, 4)):
    return nn_core.MlpNetwork.init(list(dims), rng)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
