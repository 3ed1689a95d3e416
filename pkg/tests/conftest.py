import numpy as np
import pytest


def central_difference(f, arrays, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. each array in ``arrays`` (perturbed in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = float(f())
            arr[idx] = orig - h
            down = float(f())
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of every run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
