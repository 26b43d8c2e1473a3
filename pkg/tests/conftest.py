import os

import numpy as np
import pytest

from safetrack.grid import Grid
from safetrack.hjsolver import SolverConfig, solve_hjvi
from safetrack.relsys import make_model
from safetrack.teb import TrackingBound

# hypothesis: keep property tests quick and reproducible
try:
    from hypothesis import settings

    settings.register_profile("ci", max_examples=60, deadline=None, derandomize=True)
    settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))
except ImportError:  # pragma: no cover
    pass

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record(number, name, passed, detail=""):
    ACCEPTANCE[number] = (name, bool(passed), detail)


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        mark = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{mark}] {number:>2}. {name}: {detail}")


@pytest.fixture(scope="session")
def strong_rel1d():
    """rel1d tracker faster than planner plus disturbance: V converges to r**2."""
    entry = make_model("rel1d")
    vf = solve_hjvi(entry.relative, Grid((-1.0,), (1.0,), (201,)),
                    SolverConfig(horizon=5.0, snapshots=2))
    return entry, vf


@pytest.fixture(scope="session")
def weak_rel1d():
    """rel1d tracker as fast as the planner: V(r, h) = (|r| + 0.2 h)**2."""
    entry = make_model("rel1d", {"u_max": 0.5})
    vf = solve_hjvi(entry.relative, Grid((-1.0,), (1.0,), (401,)),
                    SolverConfig(horizon=2.0, snapshots=21))
    return entry, vf


@pytest.fixture(scope="session")
def strong_bound(strong_rel1d):
    entry, vf = strong_rel1d
    return TrackingBound.single(entry.relative, vf)


@pytest.fixture(scope="session")
def weak_bound(weak_rel1d):
    entry, vf = weak_rel1d
    return TrackingBound.single(entry.relative, vf, eps=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
