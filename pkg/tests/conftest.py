import numpy as np
import pytest

from gaitdiff.nn import MLP, DenseLayer, NetworkSpec


def mlp_from_layers(layers):
    sizes = [len(layers[0][0][0])] + [len(b) for _, b in layers]
    return MLP(NetworkSpec(tuple(sizes)),
               [DenseLayer(np.array(w, dtype=float), np.array(b, dtype=float)) for w, b in layers])


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def finite_diff(f, params, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of every array in ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            fp = f()
            p[idx] = old - h
            fm = f()
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# Acceptance results: test_acceptance records one line per criterion here and
# the terminal summary prints them even when output capture is on.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
