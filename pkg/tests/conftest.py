import sys

import numpy as np
import pytest

from faircompare.oracle_sim import random_propensities
from faircompare.core import make_rng


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pi_with_zeros():
    return random_propensities(make_rng(3, 1), 200, 4, zero_row_frac=0.3)



def pytest_terminal_summary(terminalreporter):
    lines = [ln for name, mod in list(sys.modules.items()) if name.endswith("test_acceptance") for ln in getattr(mod, "RESULTS", [])]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
