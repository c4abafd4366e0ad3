import numpy as np
import pytest

from transportlab.model import Grid, ScalarField, band_limited_random

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_field(grid: Grid, seed: int, max_mode: int = 6) -> ScalarField:
    return ScalarField(grid, band_limited_random(grid, seed, max_mode, 1.0))
