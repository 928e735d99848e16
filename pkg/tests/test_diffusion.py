import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from amdiff.denoiser import OracleDenoiser, UniformDenoiser
from amdiff.diffusion import (
    LossConfig, NoiseSchedule, check_denoiser_output, combined_loss, dlm_loss, dlm_term, forward_sample,
    mtr_loss, posterior, posterior_from_alphas, reverse_mixture, reverse_step, reverse_step_alphas,
)
from amdiff.errors import DenoiserContractViolation, DimensionMismatch, TimeOrder, TimeOutOfRange
from amdiff.tokens import MASK_ID, PAD_ID

C, N, O = 3, 4, 5
K = 6


def brute_force_dlm(data, weights, den, eps):
    """Exact expected loss: sum over rows and mask patterns, adaptive quadrature in t."""
    L = data.shape[1]
    total = 0.0
    for x0, w in zip(data, weights):
        for bits in range(2 ** L):
            pat = np.array([(bits >> l) & 1 for l in range(L)], dtype=bool)
            k = pat.sum()
            if k == 0:
                continue
            xt = np.where(pat, MASK_ID, x0)

            def f(t):
                p = den.predict(xt[None], np.array([t]))[0]
                nll = -sum(math.log(p[l, x0[l]]) for l in range(L) if pat[l])
                return t ** k * (1 - t) ** (L - k) * nll / t

            val, _ = integrate.quad(f, eps, 1.0, epsabs=1e-12, epsrel=1e-10)
            total += w * val / (1 - eps)
    return total


def test_alpha_is_one_minus_t(sched):
    t = np.linspace(0.01, 1.0, 100)
    assert np.array_equal(sched.alpha(t), 1 - t)
    assert np.all(np.diff(sched.alpha(t)) < 0)
    assert sched.alpha(1.0) == 0
    assert np.allclose(np.exp(-sched.rate(t[:-1])), sched.alpha(t[:-1]), rtol=1e-14)


def test_forward_at_eps_and_one(sched, rng):
    x0 = rng.integers(3, K, size=(200, 50))
    xt = forward_sample(x0, sched.eps, sched, rng)
    kept = (xt == x0).mean()
    assert kept > 0.99
    assert np.all((xt == x0) | (xt == MASK_ID))
    assert np.all(forward_sample(x0, 1.0, sched, rng) == MASK_ID)


def test_forward_binomial_counts(sched, rng):
    x0 = np.full(1000, C)
    pvals = []
    for _ in range(100):
        k = int((forward_sample(x0, 0.5, sched, rng) == MASK_ID).sum())
        pvals.append(stats.binomtest(k, 1000, 0.5).pvalue)
    assert min(pvals) >= 0.001


def test_forward_absorbing_over_million_positions(sched, rng):
    x0 = rng.integers(3, K, size=(1000, 1000))
    t = rng.uniform(1e-3, 1.0, size=1000)
    xt = forward_sample(x0, t, sched, rng)
    assert np.all((xt == x0) | (xt == MASK_ID))


def test_forward_keeps_pad(sched, rng):
    x0 = np.array([[C, N, PAD_ID, PAD_ID]] * 100)
    xt = forward_sample(x0, 1.0, sched, rng)
    assert np.all(xt[:, 2:] == PAD_ID) and np.all(xt[:, :2] == MASK_ID)


def test_forward_time_range(sched, rng):
    for bad in (0.0, -0.1, 1.5, float("nan")):
        with pytest.raises(TimeOutOfRange):
            forward_sample([C], bad, sched, rng)


def test_posterior_examples(sched):
    assert posterior(C, N, 0.2, 0.5, sched, K).tolist() == [0, 0, 0, 1, 0, 0]
    p = posterior_from_alphas(MASK_ID, N, 0.6, 0.5, K)
    assert p[MASK_ID] == pytest.approx(0.8, abs=1e-12)
    assert p[N] == pytest.approx(0.2, abs=1e-12)
    q = posterior_from_alphas(MASK_ID, N, 1.0, 0.5, K)
    assert q[MASK_ID] == 0 and q[N] == 1


def test_posterior_exact_fractions():
    a_prev, a_t = Fraction(3, 5), Fraction(1, 2)
    assert (1 - a_prev) / (1 - a_t) == Fraction(4, 5)
    assert (a_prev - a_t) / (1 - a_t) == Fraction(1, 5)


def test_posterior_time_order(sched):
    with pytest.raises(TimeOrder):
        posterior(MASK_ID, C, 0.5, 0.5, sched, K)
    with pytest.raises(TimeOrder):
        posterior(MASK_ID, C, 0.6, 0.5, sched, K)


@given(st.floats(0.0, 0.999), st.floats(0.001, 1.0), st.integers(3, K - 1))
def test_posterior_sums_to_one(t_prev, t, x0):
    if t_prev >= t:
        t_prev, t = t / 2, t
    p = posterior(MASK_ID, x0, t_prev, t, NoiseSchedule(), K)
    assert abs(p.sum() - 1) < 1e-9 and np.all(p >= 0)


class PointMass:
    def __init__(self, tok):
        self.tok, self.K, self.mask_id = tok, K, MASK_ID

    def predict(self, xt, t):
        xt = np.atleast_2d(xt)
        p = np.zeros(xt.shape + (K,))
        p[..., self.tok] = 1.0
        keep = xt != MASK_ID
        p[keep] = 0.0
        p[keep, xt[keep]] = 1.0
        return p


def test_reverse_step_copies_unmasked(sched, rng):
    xt = np.array([C, MASK_ID, O])
    for _ in range(50):
        out = reverse_step(xt, 0.3, 0.6, UniformDenoiser(K), sched, rng)
        assert out[0] == C and out[2] == O


def test_reverse_step_terminal_point_mass(sched, rng):
    out = reverse_step(np.full((10, 3), MASK_ID), 0.0, 0.5, PointMass(N), sched, rng)
    assert np.all(out == N)


def test_reverse_step_mixture_frequencies(sched, rng):
    xt = np.full((100_000, 1), MASK_ID)
    out = reverse_step(xt, 0.4, 0.5, UniformDenoiser(K), sched, rng).ravel()
    freq = np.bincount(out, minlength=K) / out.size
    assert freq[MASK_ID] == pytest.approx(0.8, abs=0.005)
    for tok in (C, N, O):
        assert freq[tok] == pytest.approx(0.2 / 3, abs=0.003)
    mix = reverse_mixture(UniformDenoiser(K).predict(xt[:1], 0.5), 0.6, 0.5)
    assert np.allclose(mix[0, 0], [0, 0.8, 0, 0.2 / 3, 0.2 / 3, 0.2 / 3], atol=1e-15)
    assert abs(mix.sum() - 1) < 1e-12


def test_reverse_step_rejects_mask_mass(sched, rng):
    class Bad(PointMass):
        def predict(self, xt, t):
            p = super().predict(xt, t)
            p[..., MASK_ID] = 0.5
            p[..., N] = 0.5
            return p

    with pytest.raises(DenoiserContractViolation):
        reverse_step(np.array([MASK_ID]), 0.2, 0.5, Bad(N), sched, rng)


def test_contract_checker_shapes():
    with pytest.raises(DenoiserContractViolation):
        check_denoiser_output(np.ones((1, 2, K)) / K, np.zeros((1, 3), dtype=int))


def test_reverse_step_alphas_reveal_all():
    rng = np.random.default_rng(0)
    probs = UniformDenoiser(K).predict(np.full((4, 3), MASK_ID), 0.5)
    out = reverse_step_alphas(np.full((4, 3), MASK_ID), 1.0, 0.5, probs, rng)
    assert np.all(out >= 3)


def test_dlm_loss_zero_for_point_mass_data(sched, rng):
    data = np.array([[C, N, O]])
    den = OracleDenoiser(data, K=K)
    assert abs(dlm_loss(np.repeat(data, 1000, axis=0), den, sched, LossConfig(), rng)) <= 1e-12


def test_dlm_term_hand_value():
    probs = np.zeros((1, 2, K))
    probs[0, 0, C] = 1.0
    probs[0, 1, N] = probs[0, 1, O] = 0.5
    val = dlm_term(np.array([C, N]), np.array([C, MASK_ID]), 0.5, probs)
    assert val[0] == pytest.approx(2 * math.log(2), abs=1e-12)


def test_dlm_loss_matches_brute_force_small(sched):
    rng = np.random.default_rng(3)
    data = np.array([[a, b] for a in (C, N, O) for b in (C, N, O)])
    weights = rng.dirichlet(np.ones(len(data)))
    den = OracleDenoiser(data, weights, K=K)
    exact = brute_force_dlm(data, weights, den, sched.eps)
    assert exact == pytest.approx(den.exact_loss(sched), rel=1e-8)
    x0 = data[rng.choice(len(data), size=200_000, p=weights)]
    mc = dlm_loss(x0, den, sched, LossConfig(), rng)
    assert mc == pytest.approx(exact, rel=0.02)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_dlm_loss_non_negative(seed):
    rng = np.random.default_rng(seed)

    class Random:
        K, mask_id = K, MASK_ID

        def predict(self, xt, t):
            p = rng.dirichlet(np.ones(K - 3), size=xt.shape)
            out = np.zeros(xt.shape + (K,))
            out[..., 3:] = p
            keep = xt != MASK_ID
            out[keep] = 0.0
            out[keep, xt[keep]] = 1.0
            return out

    x0 = rng.integers(3, K, size=(20, 4))
    assert dlm_loss(x0, Random(), NoiseSchedule(), LossConfig(), rng) >= 0


def test_mtr_loss_examples(rng):
    y = rng.normal(size=(4, 5))
    assert mtr_loss(y, y) == 0
    assert mtr_loss(y + 1, y) == pytest.approx(1.0, abs=1e-15)
    f, W, b, target = rng.normal(size=3), rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5)
    pred = [sum(f[i] * W[i, j] for i in range(3)) + b[j] for j in range(5)]
    direct = sum((pred[j] - target[j]) ** 2 for j in range(5)) / 5
    assert mtr_loss(f, target, (W, b)) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(DimensionMismatch):
        mtr_loss(np.zeros(3), np.zeros(4))


def test_combined_loss():
    assert combined_loss(1.0, 2.0, LossConfig(lam=0.0)) == 1.0
    assert combined_loss(1.0, 2.0, LossConfig()) == pytest.approx(1.2, abs=1e-15)
    cfg = LossConfig(lam=0.3)
    a, b = combined_loss(1.0, 2.0, cfg), combined_loss(1.0, 5.0, cfg)
    assert b - a == pytest.approx(0.3 * 3, abs=1e-14)
