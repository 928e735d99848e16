from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from amdiff.denoiser import OracleDenoiser, UniformDenoiser
from amdiff.diffusion import reverse_step
from amdiff.errors import NonpositiveSigma, PredictorContractViolation
from amdiff.guidance import (
    ClassifierPredictor, GuidanceConfig, RegressorPredictor, fit_noisy_classifier, fit_noisy_regressor,
    guided_distributions, guided_position_distribution, guided_reverse_step, regressor_weight,
)
from amdiff.sampler import plain_sample
from amdiff.tokens import MASK_ID

from conftest import empirical, tv_distance

K = 7  # three specials + four content tokens
TOKS = (3, 4, 5, 6)


def test_regressor_weight_values():
    assert regressor_weight(1.0, 1.0, 0.5) == 1.0
    assert regressor_weight(1.0, 1.5, 0.5) == pytest.approx(0.31731050786291, abs=1e-12)
    assert regressor_weight(1.0, 0.0, 0.5) == pytest.approx(0.04550026389636, abs=1e-12)
    assert regressor_weight(0.0, 1.0, 1.0) == pytest.approx(2 * norm.cdf(-1), abs=1e-15)
    with pytest.raises(NonpositiveSigma):
        regressor_weight(1.0, 1.0, 0.0)


def test_regressor_weight_grid():
    err = np.linspace(0, 5, 1000)
    w = regressor_weight(0.0, err, 0.7)
    assert np.all((w > 0) & (w <= 1))
    assert np.array_equal(w, regressor_weight(0.0, -err, 0.7))
    assert np.all(np.diff(w) < 0)


def clf(table):
    """Classifier scoring a sequence by the token at any position: max of table values."""
    def fn(seqs, t):
        return np.array([max(table.get(int(v), 0.5) for v in row) for row in seqs])
    return ClassifierPredictor(fn)


def test_gamma_zero_returns_base():
    base = np.array([0, 0, 0, 0.1, 0.2, 0.3, 0.4])
    cfg = GuidanceConfig([clf({3: 0.9})], [0.0])
    out = guided_position_distribution(np.array([MASK_ID, 3]), 0, base, cfg, 0.5)
    assert np.array_equal(out, base)


def test_single_classifier_example():
    base = np.zeros(K)
    base[3] = base[4] = 0.5
    pred = ClassifierPredictor(lambda s, t: np.where(s[:, 0] == 3, 0.9, 0.1))
    out = guided_position_distribution(np.array([MASK_ID]), 0, base, GuidanceConfig([pred], [1.0]), 0.5)
    assert out[3] == pytest.approx(0.9, abs=1e-12) and out[4] == pytest.approx(0.1, abs=1e-12)


def test_two_classifiers_example():
    base = np.zeros(K)
    base[3] = base[4] = 0.5
    p1 = ClassifierPredictor(lambda s, t: np.where(s[:, 0] == 3, 0.9, 0.1))
    p2 = ClassifierPredictor(lambda s, t: np.full(len(s), 0.5))
    out = guided_position_distribution(np.array([MASK_ID]), 0, base, GuidanceConfig([p1, p2], [1.0, 1.0]), 0.5)
    assert out[3] == pytest.approx(0.9, abs=1e-12) and out[4] == pytest.approx(0.1, abs=1e-12)


def brute_force(xt, pos, base, preds, gammas, t):
    """Direct evaluation in exact arithmetic: base(z) * prod p_i(x_hat)^gamma_i, normalized."""
    w = {}
    for z in range(K):
        if base[z] == 0:
            continue
        hyp = np.array(xt)
        hyp[pos] = z
        val = Fraction(base[z])
        for fn, g in zip(preds, gammas):
            val *= Fraction(float(fn(hyp[None], t)[0])) ** g
        w[z] = val
    total = sum(w.values())
    out = np.zeros(K)
    for z, v in w.items():
        out[z] = float(v / total)
    return out


def test_matches_brute_force_on_enumerable_instance():
    rng = np.random.default_rng(0)
    score1 = {seq: rng.uniform(0.05, 0.95) for seq in product(range(K), repeat=3)}
    score2 = {seq: rng.uniform(0.05, 0.95) for seq in product(range(K), repeat=3)}
    f1 = lambda s, t: np.array([score1[tuple(int(v) for v in r)] for r in s])
    f2 = lambda s, t: np.array([score2[tuple(int(v) for v in r)] for r in s])
    preds = [ClassifierPredictor(f1), ClassifierPredictor(f2)]
    worst = 0.0
    for trial in range(30):
        xt = rng.choice(TOKS, size=3)
        pos = trial % 3
        xt[pos] = MASK_ID
        if trial % 2:
            xt[(pos + 1) % 3] = MASK_ID
        base = np.zeros(K)
        base[3:] = rng.dirichlet(np.ones(4))
        gammas = [int(rng.integers(0, 4)), int(rng.integers(0, 4))]
        ours = guided_position_distribution(xt, pos, base, GuidanceConfig(preds, gammas), 0.5)
        worst = max(worst, np.abs(ours - brute_force(xt, pos, base, [f1, f2], gammas, 0.5)).max())
    assert worst <= 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.0, 30.0))
def test_output_is_distribution(seed, gamma):
    rng = np.random.default_rng(seed)
    base = np.zeros(K)
    base[3:] = rng.dirichlet(np.ones(4) * 0.3)
    table = dict(zip(TOKS, rng.uniform(0, 1, size=4)))
    pred = ClassifierPredictor(lambda s, t: np.array([table[int(r[0])] for r in s]))
    out = guided_position_distribution(np.array([MASK_ID, 3]), 0, base, GuidanceConfig([pred], [gamma]), 0.5)
    assert abs(out.sum() - 1) <= 1e-9 and np.all(out >= 0)


def test_monotone_in_gamma():
    rng = np.random.default_rng(4)
    for _ in range(20):
        base = np.zeros(K)
        base[3:] = rng.dirichlet(np.ones(4))
        table = dict(zip(TOKS, rng.uniform(0.01, 1, size=4)))
        best = max(table, key=table.get)
        pred = ClassifierPredictor(lambda s, t: np.array([table[int(r[0])] for r in s]))
        mass = [guided_position_distribution(np.array([MASK_ID]), 0, base, GuidanceConfig([pred], [g]), 0.5)[best]
                for g in np.linspace(0, 20, 41)]
        assert np.all(np.diff(mass) >= -1e-15)


def test_strong_gamma_does_not_underflow():
    base = np.zeros(K)
    base[3:] = 0.25
    pred = ClassifierPredictor(lambda s, t: np.where(s[:, 0] == 3, 1e-30, 1e-40))
    out = guided_position_distribution(np.array([MASK_ID]), 0, base, GuidanceConfig([pred], [15.0]), 0.5)
    assert out[3] == pytest.approx(1.0) and np.all(np.isfinite(out))


def test_all_zero_scores_fall_back_to_base():
    base = np.zeros(K)
    base[3:] = [0.1, 0.2, 0.3, 0.4]
    pred = ClassifierPredictor(lambda s, t: np.zeros(len(s)))
    out = guided_position_distribution(np.array([MASK_ID]), 0, base, GuidanceConfig([pred], [1.0]), 0.5)
    assert np.allclose(out, base, atol=1e-15)


def test_candidate_cap():
    base = np.zeros(K)
    base[3:] = [0.1, 0.2, 0.3, 0.4]
    pred = ClassifierPredictor(lambda s, t: np.full(len(s), 0.5))
    full = guided_position_distribution(np.array([MASK_ID]), 0, base, GuidanceConfig([pred], [1.0], cap=K), 0.5)
    assert np.allclose(full, base, atol=1e-15)
    top2 = guided_position_distribution(np.array([MASK_ID]), 0, base, GuidanceConfig([pred], [1.0], cap=2), 0.5)
    assert np.allclose(top2[5:], [3 / 7, 4 / 7], atol=1e-15) and top2[3] == top2[4] == 0


def test_predictor_contract():
    bad = ClassifierPredictor(lambda s, t: np.full(len(s), 1.5))
    base = np.zeros(K)
    base[3:] = 0.25
    with pytest.raises(PredictorContractViolation):
        guided_position_distribution(np.array([MASK_ID]), 0, base, GuidanceConfig([bad], [1.0]), 0.5)
    wrong_shape = RegressorPredictor(lambda s, t: np.zeros(len(s) + 1), 1.0, 0.5)
    with pytest.raises(PredictorContractViolation):
        guided_position_distribution(np.array([MASK_ID]), 0, base, GuidanceConfig([wrong_shape], [1.0]), 0.5)
    with pytest.raises(NonpositiveSigma):
        RegressorPredictor(lambda s, t: np.zeros(len(s)), 1.0, lambda t: 0.0).log_score(np.zeros((1, 1), int), 0.5)


def test_gamma_zero_step_matches_plain_step(sched):
    data = np.array([[a, b] for a in (3, 4, 5) for b in (3, 4, 5)])
    den = OracleDenoiser(data, np.random.default_rng(1).dirichlet(np.ones(9)), K=K)
    xt = np.full((100_000, 2), MASK_ID)
    cfg = GuidanceConfig([clf({3: 0.9})], [0.0])
    a = guided_reverse_step(xt, 0.3, 0.7, den, sched, cfg, np.random.default_rng(2))
    b = reverse_step(xt, 0.3, 0.7, den, sched, np.random.default_rng(3))
    assert tv_distance(empirical(a), empirical(b)) <= 0.01


def test_classifier_tilt_towards_token(sched):
    den = UniformDenoiser(K)
    pred = ClassifierPredictor(lambda s, t: np.where((s == 4).any(axis=1), 0.99, 0.01))
    cfg = GuidanceConfig([pred], [15.0])
    x = plain_sample(den, sched, 32, 4, 1000, np.random.default_rng(0), guidance=cfg)
    assert (x == 4).any(axis=1).mean() >= 0.95
    plain = plain_sample(den, sched, 32, 4, 1000, np.random.default_rng(0))
    assert (plain == 4).any(axis=1).mean() < 0.8


def test_batched_matches_single_position():
    rng = np.random.default_rng(8)
    pred = RegressorPredictor(lambda s, t: (s == 4).sum(axis=1).astype(float), 2.0, 0.5)
    cfg = GuidanceConfig([pred], [3.0])
    xt = np.array([[MASK_ID, 3, MASK_ID], [5, MASK_ID, MASK_ID]])
    rows, cols = np.nonzero(xt == MASK_ID)
    base = np.zeros((len(rows), K))
    base[:, 3:] = rng.dirichlet(np.ones(4), size=len(rows))
    batched = guided_distributions(xt, rows, cols, base, cfg, 0.5)
    for j, (r, c) in enumerate(zip(rows, cols)):
        single = guided_position_distribution(xt[r], c, base[j], cfg, 0.5)
        assert np.allclose(batched[j], single, atol=1e-15)


def test_noisy_predictors_fit(sched):
    rng = np.random.default_rng(0)
    corpus = rng.choice(TOKS, size=(400, 6))
    y = (corpus == 4).sum(axis=1).astype(float)
    reg = fit_noisy_regressor(corpus, y, K, sched, rng)
    assert reg.w[4] - reg.w[3] > 0.5
    labels = (corpus == 5).any(axis=1).astype(int)
    cls = fit_noisy_classifier(corpus, labels, K, sched, rng)
    p = cls(corpus, 0.0)
    assert np.all((p >= 0) & (p <= 1))
    assert p[labels == 1].mean() > p[labels == 0].mean()
