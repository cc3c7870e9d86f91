import numpy as np
import pytest

from protofsl import kernels

BACKENDS = [kernels.numpy_impl] + ([kernels.numba_impl] if kernels.numba_impl is not None else [])

_acceptance_lines = []


@pytest.fixture(params=BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def acceptance_log():
    """Record one PASS/FAIL line per acceptance criterion, printed at session end."""

    def record(name, passed, detail=""):
        _acceptance_lines.append(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
