import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from usim.core import RepresentationSet  # noqa: E402

CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gaussian_pair(rng):
    a = RepresentationSet(rng.standard_normal((60, 4)), name="A")
    b = RepresentationSet(rng.standard_normal((60, 4)), name="B")
    return a, b


def rep(x, labels=None, name="Z"):
    return RepresentationSet(np.asarray(x, dtype=float), labels, name)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[key])
