import numpy as np
import pytest

from phgd import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param


ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Print one verdict line immediately and again in the session summary."""
    def emit(line):
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
