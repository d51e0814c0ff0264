from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from scooter_nav.pathmodel import build_path

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "scooter_nav" / "scenarios"


@pytest.fixture
def l_path():
    return build_path([(0, 0), (10, 0), (10, 10)], [0.75, 0.75])


@pytest.fixture
def straight_path():
    return build_path([(0, 0), (100, 0)], [0.75])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed as a block at the end of the session
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
