import sys

import numpy as np
import pytest

from slipnav.controller import HopModel, steady_gait
from slipnav.dynamics import SlipParams
from slipnav.harness.world import bundled_model_path


@pytest.fixture(scope="session")
def params():
    return SlipParams()


@pytest.fixture(scope="session")
def hop_model():
    return HopModel.load(bundled_model_path())


@pytest.fixture(scope="session")
def gait(params):
    return steady_gait(params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in sorted(verdicts):
            terminalreporter.write_line(line)
