import numpy as np
import pytest

from rfkit.rng import stream


def make_blobs(seed, n=600, d=5, classes=3, spread=1.0, sep=3.0):
    """Gaussian class clusters; the workhorse toy classification task."""
    rng = stream(seed, "test-blobs")
    centers = rng.normal(0.0, sep, size=(classes, d))
    y = rng.integers(0, classes, size=n)
    X = centers[y] + rng.normal(0.0, spread, size=(n, d))
    return X, y


def make_separable(seed, n=100, d=2, margin=1.0):
    """Two linearly separable clouds split by the first coordinate."""
    rng = stream(seed, "test-separable")
    y = rng.integers(0, 2, size=n)
    X = rng.normal(0.0, 0.5, size=(n, d))
    X[:, 0] += np.where(y == 1, margin, -margin) * 2.0
    return X, y


def make_spiral(seed, n=2000, noise=0.08):
    """Two interleaved spirals; linearly inseparable 2-d benchmark."""
    rng = stream(seed, "test-spiral")
    m = n // 2
    t = np.sqrt(rng.random(m)) * 3.0 * np.pi
    base = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) / (3.0 * np.pi)
    X = np.vstack([base, -base]) + rng.normal(0.0, noise, size=(n - n % 2, 2))
    y = np.repeat([0, 1], m)
    return X, y


@pytest.fixture
def blobs():
    return make_blobs(0)


# verdict lines appended by tests/test_acceptance.py; echoed after the run
# so they survive output capture
acceptance_verdicts: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_verdicts:
        terminalreporter.section("acceptance verdicts")
        for line in acceptance_verdicts:
            terminalreporter.write_line(line)
