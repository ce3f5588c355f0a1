import numpy as np
import pytest

from nsrom.full_model import CavityProblem
from nsrom.grid_fem import GridSpec, build_mesh
from nsrom.offline import STRATEGIES, build_reduced_basis, make_deim


@pytest.fixture(scope="session")
def mesh8():
    return build_mesh(GridSpec(8, 2))


@pytest.fixture(scope="session")
def problem8():
    return CavityProblem(GridSpec(8, 2))


@pytest.fixture(scope="session")
def problem16():
    return CavityProblem(GridSpec(16, 2))


@pytest.fixture(scope="session")
def offline16(problem16):
    """Small offline run shared by the online and offline tests."""
    return build_reduced_basis(problem16, n_trial=40, tau=1e-4, strategies=STRATEGIES, seed=3)


@pytest.fixture(scope="session")
def rom16(offline16):
    return offline16.rom(make_deim(offline16, "full_ks"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion
# --------------------------------------------------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        _CRITERIA[report.nodeid] = (report.outcome, props)


def _criterion_number(nodeid):
    return int(nodeid.split("test_criterion_")[1].split("_")[0])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_CRITERIA, key=_criterion_number):
        outcome, props = _CRITERIA[nodeid]
        status = "PASS" if outcome == "passed" else "FAIL"
        detail = ", ".join(f"{k}={v}" for k, v in props.items())
        terminalreporter.write_line(f"{status}  {nodeid.split('::')[-1]}  {detail}")
