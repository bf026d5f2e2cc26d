import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from entropic_control.lq_oracle import LQSpec  # noqa: E402

CRITERIA = {}


def record(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])


@pytest.fixture
def lq_spec():
    return LQSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
