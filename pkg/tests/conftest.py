import numpy as np
import pytest

from ggmp.dataset import DistributionValuedDataset, InputPoint, SampleBlock

# (criterion number, line) pairs recorded by the acceptance tests
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(X, blocks, prefix="n"):
    """Dataset from an (N, d) input array and a list of sample arrays."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    inputs, samples = [], {}
    for n, (x, Y) in enumerate(zip(X, blocks)):
        pid = f"{prefix}{n:03d}"
        inputs.append(InputPoint(pid, x))
        Y = np.asarray(Y, dtype=float)
        samples[pid] = SampleBlock(pid, Y[:, None] if Y.ndim == 1 else Y)
    return DistributionValuedDataset(tuple(inputs), samples)


def parallel_tracks(N=25, T=300, sep=2.0, var=0.01, seed=0):
    """Two constant tracks at +/- sep with equal weight."""
    rng = np.random.default_rng(seed)
    X = np.linspace(-2, 2, N)
    blocks = []
    for _ in range(N):
        sign = np.where(rng.uniform(size=T) < 0.5, -1.0, 1.0)
        blocks.append(sign * sep + np.sqrt(var) * rng.standard_normal(T))
    return make_dataset(X, blocks)
