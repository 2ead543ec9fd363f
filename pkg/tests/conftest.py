import numpy as np
import pytest

from mocap2pose import body_model as bm
from mocap2pose.acceptance import Fixture


@pytest.fixture(scope="session")
def model():
    return bm.build_test_body()


@pytest.fixture(scope="session")
def layout(model):
    return bm.default_marker_layout(model)


@pytest.fixture(scope="session")
def fixture():
    """Test body, marker layout and a pose prior fitted on generated poses."""
    return Fixture.build(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Criterion number -> PASS/FAIL line, printed in the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[k])
