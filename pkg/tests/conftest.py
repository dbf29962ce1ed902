import numpy as np
import pytest

from mvsetlab.green import green_function
from mvsetlab.manifold import FLAT, assemble_operators, build_builtin


@pytest.fixture(scope="session")
def coarse_disk():
    """Flat unit disk at h = 0.04 with the Green's function at the centre."""
    m = build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, 0.04)
    ops = assemble_operators(m)
    g = green_function(ops, m.nearest_vertex((0.0, 0.0)))
    return m, ops, g


@pytest.fixture(scope="session")
def disk_02():
    m = build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, 0.02)
    ops = assemble_operators(m)
    g = green_function(ops, m.nearest_vertex((0.0, 0.0)))
    return m, ops, g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_lines():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
