import numpy as np
import pytest

from amdiff.diffusion import NoiseSchedule


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sched():
    return NoiseSchedule()


def tv_distance(p, q):
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical(rows):
    """Row tuples -> {tuple: frequency}."""
    uniq, counts = np.unique(np.asarray(rows), axis=0, return_counts=True)
    n = counts.sum()
    return {tuple(int(v) for v in u): c / n for u, c in zip(uniq, counts)}
