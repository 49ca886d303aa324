import numpy as np
import pytest

from prclab.models import goodwin_model, radial_clock_model
from prclab.orbit import solve_orbit
from prclab.prc import adjoint_prc


@pytest.fixture(scope="session")
def radial():
    return radial_clock_model()


@pytest.fixture(scope="session")
def goodwin():
    return goodwin_model()


@pytest.fixture(scope="session")
def radial_orbits(radial):
    return {s: solve_orbit(radial, N=256, scheme=s) for s in ("trapezoidal", "multiple_shooting")}


@pytest.fixture(scope="session")
def goodwin_orbits(goodwin):
    return {s: solve_orbit(goodwin, N=256, scheme=s) for s in ("trapezoidal", "multiple_shooting")}


@pytest.fixture(scope="session")
def goodwin_prcs(goodwin, goodwin_orbits):
    return {s: adjoint_prc(goodwin, o) for s, o in goodwin_orbits.items()}


@pytest.fixture(scope="session")
def goodwin_small(goodwin):
    """Coarser trapezoidal orbit used by the sensitivity and gradient oracles."""
    return solve_orbit(goodwin, N=128, scheme="trapezoidal")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    def record(k: int, ok: bool, detail: str):
        ok_before, details = ACCEPTANCE.get(k, (True, []))
        ACCEPTANCE[k] = (ok_before and bool(ok), details + [detail])
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, details = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  " + "; ".join(details))
