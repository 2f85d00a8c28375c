import numpy as np
import pytest

from maslov_nbody import central, core, homothetic

ACCEPTANCE = {}


def record(number, name, passed, detail=""):
    ACCEPTANCE[number] = (name, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def _cc(masses, d, name):
    system = core.MassSystem(masses, d)
    return central.find_cc(system, system.builtin(name))


@pytest.fixture(scope="session")
def two_body_cc():
    return _cc([1.0, 1.0], 1, "two-body")


@pytest.fixture(scope="session")
def lagrange_cc():
    return _cc([1.0, 1.0, 1.0], 2, "equilateral")


@pytest.fixture(scope="session")
def euler_cc():
    return _cc([1.0, 1.0, 1.0], 2, "collinear")


@pytest.fixture(scope="session")
def euler_line_cc():
    return _cc([1.0, 1.0, 1.0], 1, "collinear")


@pytest.fixture(scope="session")
def lagrange_orbit(lagrange_cc):
    return homothetic.build_orbit(lagrange_cc, -1.0)
