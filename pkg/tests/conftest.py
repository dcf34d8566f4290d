import numpy as np
import pytest

from adsub.prior import IsotropicGmm
from adsub.schedule import build_linear_schedule


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sched():
    return build_linear_schedule(200, 5e-4, 0.1)


def random_gmm(rng, K, d, scale=1.0):
    w = rng.dirichlet(np.ones(K))
    return IsotropicGmm(w, rng.normal(0, scale, (K, d)), rng.uniform(0.05, 1.0, K))


# --- acceptance report ----------------------------------------------------
# test_acceptance.py records a detail string per criterion; the hook below
# prints one PASS/FAIL line for each criterion test that ran.

ACCEPTANCE_DETAILS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    reports = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in nodeid and getattr(rep, "when", "call") in ("call", "setup"):
                n = int(nodeid.split("test_criterion_")[1].split("_")[0])
                reports.append((n, "PASS" if outcome == "passed" else "FAIL"))
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for n, status in sorted(set(reports)):
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {ACCEPTANCE_DETAILS.get(n, '')}")
