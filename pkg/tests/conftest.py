import numpy as np
import pytest

from endolab import families


@pytest.fixture(scope="session")
def block_linear():
    return families.linear()


@pytest.fixture(scope="session")
def cat_linear():
    return families.linear(families.CAT)


@pytest.fixture(scope="session")
def control():
    """Triangular control: move (a) only."""
    return families.cross_shear(0.5, 0.0)


@pytest.fixture(scope="session")
def live():
    return families.cross_shear(0.5, 0.5)


@pytest.fixture(scope="session")
def manufactured():
    return families.manufactured_conjugacy(0.005)


@pytest.fixture(scope="session")
def generic():
    return families.generic_displacement(0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
