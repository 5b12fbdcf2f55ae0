import pytest

from metaband.dirichlet import compute_dirichlet
from metaband.effective import build_response
from metaband.electrostatic import compute_resonances_fem, compute_w1_projection
from metaband.mesh import generate_mesh
from metaband.validation import reference_cell

COARSE_H = 1.0 / 32.0


@pytest.fixture(scope="session")
def cell():
    return reference_cell()


@pytest.fixture(scope="session")
def mesh(cell):
    return generate_mesh(cell, COARSE_H)


@pytest.fixture(scope="session")
def dirichlet(mesh):
    return compute_dirichlet(mesh)


@pytest.fixture(scope="session")
def electro(mesh):
    return compute_resonances_fem(mesh, kappa=(1.0, 0.0))


@pytest.fixture(scope="session")
def w1(mesh):
    return compute_w1_projection(mesh, (1.0, 0.0))


@pytest.fixture(scope="session")
def response(dirichlet, electro, w1):
    """Reference cell at w = 40 with the 12 strongest resonances."""
    return build_response(dirichlet, electro.strongest(12), w1, 40.0)


@pytest.fixture(scope="session")
def response_dn(dirichlet, electro, w1):
    """w = 300, where double-negative intervals exist."""
    return build_response(dirichlet, electro.strongest(12), w1, 300.0)


_ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
