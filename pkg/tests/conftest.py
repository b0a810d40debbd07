import os

import numpy as np
import pytest

os.environ.setdefault("JAX_ENABLE_X64", "1")

from dpinn import mesh as M


@pytest.fixture
def right_triangle():
    return M.TriMesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


@pytest.fixture
def unit_square():
    return M.TriMesh([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], [[0, 1, 2], [0, 2, 3]])


@pytest.fixture(scope="session")
def square_02():
    return M.generate_square(0.2)


@pytest.fixture(scope="session")
def coil():
    return M.generate_coil()


@pytest.fixture(scope="session")
def sphere():
    return M.generate_sphere(400)


@pytest.fixture(scope="session")
def fixture_meshes(square_02, coil, sphere):
    """Three meshes of different kinds: flat with boundary, open tube, closed surface."""
    return {"square": square_02[0], "coil": coil, "sphere": sphere}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria: list[str] = []


@pytest.fixture
def report_criterion(request):
    """Print one PASS/FAIL line for an acceptance criterion; repeated in the terminal summary."""

    def report(number, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _criteria.append(line)
        tr = request.config.pluginmanager.get_plugin("terminalreporter")
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)
