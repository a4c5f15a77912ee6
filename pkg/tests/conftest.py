import numpy as np
import pytest

from graffiti_cdpr.model import RobotModel


@pytest.fixture
def model():
    return RobotModel()


@pytest.fixture
def frictionless():
    return RobotModel(friction_coulomb=0.0, friction_viscous=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record and assert one acceptance criterion as a single PASS/FAIL line."""
    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} [{detail}]"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
