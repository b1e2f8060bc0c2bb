import numpy as np
import pytest

from wavernn_engine import kernels

BACKENDS = kernels.available()


@pytest.fixture(params=BACKENDS)
def backend(request):
    with kernels.using(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scalar_matvec(D, x):
    """Plain double-precision dot loop, the reference every kernel is checked against."""
    D = np.asarray(D, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(D.shape[0])
    for i in range(D.shape[0]):
        acc = 0.0
        for j in range(D.shape[1]):
            acc += D[i, j] * x[j]
        out[i] = acc
    return out


# ----------------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion in the terminal summary

_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        _CRITERIA.append((marker.args[0], marker.args[1], rep.outcome.upper()))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, text, outcome in sorted(_CRITERIA):
        status = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {text}")
