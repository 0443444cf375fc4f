import pytest

from nested_spde import use_backend
from nested_spde._accel import HAVE_NUMBA

BACKENDS = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run a test once per kernel backend."""
    with use_backend(request.param):
        yield request.param


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
