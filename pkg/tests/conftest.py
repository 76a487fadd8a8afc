import numpy as np
import pytest

from nematiq.fields import make_grid
from nematiq.operators import PolynomialF


@pytest.fixture(scope="session")
def grid():
    return make_grid(32, 32)


@pytest.fixture(scope="session")
def gl1():
    return PolynomialF.gl(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sample_field(grid, fn_list, tag):
    """SpectralField from callables of (x, y), one per component."""
    from nematiq.fields import SpectralField

    x, y = grid.points()
    return SpectralField.from_samples(grid, np.stack([f(x, y) for f in fn_list]), tag)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def report(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
