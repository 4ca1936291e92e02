import numpy as np
import pytest

from dogdlab import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    return kernels.get_backend(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_grad(f, x, h=1e-6):
    """Central finite-difference gradient."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# -- acceptance summary ---------------------------------------------------

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_A"):
        return
    crit = name[5:].split("_")[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _acceptance[crit] = ("PASS" if report.outcome == "passed" else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_acceptance, key=lambda c: int(c[1:])):
        status, detail = _acceptance[crit]
        terminalreporter.write_line(f"{crit:<4} {status}  {detail}")
