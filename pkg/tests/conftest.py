import numpy as np
import pytest

from bnnkit.data import SplitConfig, split, synth_blobs
from bnnkit.mlp import Batch, MlpSpec, init_params


@pytest.fixture(scope="session")
def tiny_spec():
    return MlpSpec(4, (5,), 3)


@pytest.fixture(scope="session")
def tiny_batch():
    rng = np.random.default_rng(1)
    return Batch(rng.normal(size=(8, 4)), rng.integers(0, 3, 8))


@pytest.fixture(scope="session")
def tiny_theta(tiny_spec):
    return init_params(tiny_spec, 0)


@pytest.fixture(scope="session")
def blob_splits():
    """Separable 3-class blobs: (train, valid) halves of one draw."""
    full = synth_blobs(3, 200, 16, 0.25, 1234)
    return split(full, SplitConfig(0.5, 1234))


def central_diff(f, x, h=1e-5):
    """Central finite differences of a scalar function, coordinate by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def grad_rel_err(analytic, fd, floor=1e-6):
    """Max relative deviation between an analytic gradient and its FD oracle.

    Central differences at h=1e-5 resolve roughly 1e-11 absolute in double
    precision, so the denominator floors at 1e-6: below that scale the
    comparison is an absolute check at the oracle's own noise level instead
    of dividing FD noise by a vanishing gradient.
    """
    analytic = np.asarray(analytic)
    fd = np.asarray(fd)
    return float((np.abs(fd - analytic) / np.maximum(np.abs(analytic), floor)).max())


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for status in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            name = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in name:
                crit = name.split("::")[-1]
                lines.append((crit, status.upper()))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for crit, status in sorted(lines):
            terminalreporter.write_line(f"{status:8s} {crit}")
