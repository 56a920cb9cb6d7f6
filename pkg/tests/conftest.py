import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=300, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_lagrangian(rng, n):
    """Orthonormal frame of a random Lagrangian subspace: graph of a symmetric matrix, rotated symplectically."""
    a = rng.normal(size=(n, n))
    s = a + a.T
    frame = np.vstack([np.eye(n), s])
    # symplectic shear and rotation keep the subspace Lagrangian
    b = rng.normal(size=(n, n))
    shear = np.block([[np.eye(n), b + b.T], [np.zeros((n, n)), np.eye(n)]])
    q, _ = np.linalg.qr(shear @ frame)
    return q


# one PASS/FAIL line per acceptance criterion at the end of the run
_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    ok, secs = _ACCEPTANCE.get(report.nodeid, (True, 0.0))
    # setup time counts too: shared fixtures run the long integrations
    _ACCEPTANCE[report.nodeid] = (ok and not report.failed, secs + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    total = 0.0
    for nodeid, (ok, secs) in _ACCEPTANCE.items():
        total += secs
        name = nodeid.split("::")[-1].removeprefix("test_")
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'} ({secs:.1f} s)")
    terminalreporter.write_line(f"acceptance total: {total:.1f} s")
