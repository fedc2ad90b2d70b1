import numpy as np
import pytest

from sqgfem.fem import assemble_operators
from sqgfem.mesh import build_icosphere


@pytest.fixture(scope="session")
def meshes():
    return {r: build_icosphere(r) for r in range(5)}


@pytest.fixture(scope="session")
def operators(meshes):
    return {r: assemble_operators(m) for r, m in meshes.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail):
    """Register one acceptance line; all lines are printed in the terminal summary."""
    line = f"CRITERION {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
