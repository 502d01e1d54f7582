from __future__ import annotations

import numpy as np
import pytest

from hotrack import sdf as sdf_mod
from hotrack import shapes
from hotrack.hand.model import HandModel


@pytest.fixture(scope="session")
def model():
    return HandModel()


@pytest.fixture(scope="session")
def sphere_grid():
    """Radius 0.1 icosphere on a 64-cell grid."""
    mesh = shapes.icosphere(radius=0.1, subdivisions=4)
    return sdf_mod.build_from_mesh(mesh, resolution=64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria record one line each; printed together at the end
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
