import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amdiff import _kernels as k

needs_numba = pytest.mark.skipif(not k.HAVE_NUMBA, reason="numba not active")

SCRIPT = """
import json, numpy as np
from amdiff import _kernels
from amdiff.denoiser import OracleDenoiser
from amdiff.diffusion import NoiseSchedule
from amdiff.sampler import SamplerConfig, RemaskSchedule, sample
data = np.array([[a, b] for a in (3, 4, 5) for b in (3, 4, 5)])
den = OracleDenoiser(data, np.full(9, 1 / 9), K=6)
x = sample(den, NoiseSchedule(), SamplerConfig(steps=16, length=2, n_samples=500), None, RemaskSchedule(),
           np.random.default_rng(0))
print(json.dumps({"backend": _kernels.BACKEND, "x": x.tolist()}))
"""


def run_with(flag):
    env = dict(os.environ, AMDIFF_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_flag_selects_backend_and_results_match():
    fallback = run_with("1")
    assert fallback["backend"] == "numpy"
    default = run_with("0")
    if k.HAVE_NUMBA:
        assert default["backend"] == "numba"
    assert default["x"] == fallback["x"]


@needs_numba
@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 50), st.integers(1, 12))
def test_categorical_backends_identical(seed, n, K):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(K) * 0.5, size=n)
    probs[rng.random((n, K)) < 0.2] = 0.0
    probs[:, -1] += 1e-3
    probs /= probs.sum(axis=1, keepdims=True)
    u = rng.random(n)
    u[0] = np.nextafter(1.0, 0)
    assert np.array_equal(k.categorical_sample_np(probs, u), k.categorical_sample_nb(probs, u))


@needs_numba
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_oracle_backends_agree(seed):
    rng = np.random.default_rng(seed)
    data = rng.integers(3, 7, size=(20, 3))
    w = rng.dirichlet(np.ones(20))
    xt = np.where(rng.random((15, 3)) < 0.5, 1, rng.integers(3, 7, size=(15, 3)))
    p1, ok1 = k.oracle_marginals_np(data, w, xt, 1, 7)
    p2, ok2 = k.oracle_marginals_nb(data, w, xt, 1, 7)
    assert np.array_equal(ok1, ok2)
    assert np.allclose(p1, p2, rtol=1e-12, atol=1e-15)


def test_categorical_never_picks_zero_mass():
    rng = np.random.default_rng(0)
    probs = np.zeros((1000, 5))
    probs[:, 2] = 0.3
    probs[:, 4] = 0.7
    u = rng.random(1000)
    u[:3] = [0.0, np.nextafter(1.0, 0), 0.3]
    out = k.categorical_sample_np(probs, u)
    assert set(out.tolist()) <= {2, 4}
    assert out[2] == 4


def test_sample_categorical_frequencies():
    rng = np.random.default_rng(1)
    p = np.array([0.1, 0.0, 0.6, 0.3])
    draws = k.sample_categorical(np.tile(p, (200_000, 1)), rng)
    assert np.allclose(np.bincount(draws, minlength=4) / draws.size, p, atol=0.004)
