"""Predictor-guided reverse steps.

For a masked position l that is revealed at this step, the clean-token
distribution from the denoiser is tilted by one or more predictors:

    w(z) = base(z) * prod_i p_i(x_hat(z), t) ** gamma_i

where x_hat(z) is x_t with z written at position l and every other position
left as it is in x_t. The weights are renormalized over the candidates.
Regressors enter through p = 2 * Phi(-|y_target - y_pred| / sigma(t)).

Everything is computed in log space: with gamma around 15 the products
underflow in linear space.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

from ._kernels import sample_categorical
from .diffusion import (
    as_batch,
    check_denoiser_output,
    check_order,
    check_time,
    forward_sample,
    sample_times,
    unmask_probability,
)
from .errors import DimensionMismatch, NonpositiveSigma, PredictorContractViolation
from .tokens import MASK_ID, SPECIALS

LOG2 = np.log(2.0)


def regressor_weight(y_target, y_pred, sigma):
    """2 * Phi(-|y_target - y_pred| / sigma), a value in (0, 1]."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise NonpositiveSigma(f"sigma must be positive, got {sigma}")
    z = -np.abs(np.asarray(y_target, dtype=np.float64) - np.asarray(y_pred, dtype=np.float64)) / sigma
    return 2.0 * ndtr(z)


def log_regressor_weight(y_target, y_pred, sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise NonpositiveSigma(f"sigma must be positive, got {sigma}")
    z = -np.abs(np.asarray(y_target, dtype=np.float64) - np.asarray(y_pred, dtype=np.float64)) / sigma
    return LOG2 + log_ndtr(z)


class ClassifierPredictor:
    """Wraps ``fn(seqs (B, L), t) -> (B,)`` probabilities of the desired class."""

    kind = "classifier"

    def __init__(self, fn, name="classifier"):
        self.fn = fn
        self.name = name

    def evaluate(self, seqs, t):
        p = np.asarray(self.fn(seqs, t), dtype=np.float64)
        if p.shape != (seqs.shape[0],):
            raise PredictorContractViolation(f"{self.name}: expected {seqs.shape[0]} outputs, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise PredictorContractViolation(f"{self.name}: probabilities must lie in [0, 1]")
        return p

    def log_score(self, seqs, t):
        with np.errstate(divide="ignore"):
            return np.log(self.evaluate(seqs, t))


class RegressorPredictor:
    """Wraps ``fn(seqs, t) -> (B,)`` predictions; scored against ``target``.

    ``sigma`` is a positive constant or a function of t.
    """

    kind = "regressor"

    def __init__(self, fn, target, sigma, name="regressor"):
        self.fn = fn
        self.target = target
        self.sigma = sigma
        self.name = name

    def sigma_at(self, t):
        s = self.sigma(t) if callable(self.sigma) else self.sigma
        if not s > 0:
            raise NonpositiveSigma(f"{self.name}: sigma({t}) = {s}")
        return s

    def evaluate(self, seqs, t):
        y = np.asarray(self.fn(seqs, t), dtype=np.float64)
        if y.shape != (seqs.shape[0],) or not np.all(np.isfinite(y)):
            raise PredictorContractViolation(f"{self.name}: expected {seqs.shape[0]} finite predictions")
        return y

    def log_score(self, seqs, t):
        return log_regressor_weight(self.target, self.evaluate(seqs, t), self.sigma_at(t))


@dataclass
class GuidanceConfig:
    predictors: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    cap: int = None  # keep only the top-N base candidates; None keeps all

    def __post_init__(self):
        if len(self.predictors) != len(self.gammas):
            raise DimensionMismatch("one gamma per predictor is required")
        if any(g < 0 for g in self.gammas):
            raise ValueError("gammas must be >= 0")

    def active(self):
        return [(p, g) for p, g in zip(self.predictors, self.gammas) if g != 0]

    def with_gammas(self, gammas):
        return GuidanceConfig(self.predictors, list(gammas), self.cap)


def _candidates(base, cap):
    """Indices of candidate tokens for each row of ``base``: (n, N) plus validity mask."""
    n, K = base.shape
    order = np.argsort(-base, axis=1, kind="stable")
    N = K if cap is None else min(cap, K)
    cand = order[:, :N]
    valid = np.take_along_axis(base, cand, axis=1) > 0
    return cand, valid


def guided_distributions(xt, rows, cols, base, cfg, t):
    """Guided clean-token distributions for positions (rows[j], cols[j]).

    ``xt`` is (B, L); ``base`` is (n, K), one denoiser row per position.
    """
    base = np.asarray(base, dtype=np.float64)
    active = cfg.active()
    if not active and cfg.cap is None:
        return base.copy()
    n, K = base.shape
    cand, valid = _candidates(base, cfg.cap)
    with np.errstate(divide="ignore"):
        logw = np.where(valid, np.log(np.take_along_axis(base, cand, axis=1)), -np.inf)
    prior = logw.copy()
    if active:
        # one hypothesis sequence per (position, candidate), only for live candidates
        jj, kk = np.nonzero(valid)
        hyp = xt[rows[jj]].copy()
        hyp[np.arange(jj.size), cols[jj]] = cand[jj, kk]
        for pred, gamma in active:
            logw[jj, kk] += gamma * pred.log_score(hyp, t)
    out = np.zeros_like(base)
    norm = logsumexp(logw, axis=1, keepdims=True)
    dead = ~np.isfinite(norm[:, 0])
    if dead.any():
        # every candidate scored zero, so the predictors say nothing: fall back to the base law
        logw[dead] = prior[dead]
        norm[dead] = logsumexp(prior[dead], axis=1, keepdims=True)
    np.put_along_axis(out, cand, np.exp(logw - norm), axis=1)
    return out


def guided_position_distribution(xt, pos, base, cfg, t, mask_id=MASK_ID):
    """Guided distribution for a single masked position of a single sequence."""
    xt = np.asarray(xt, dtype=np.int64)
    if xt[pos] != mask_id:
        raise ValueError(f"position {pos} is not masked")
    base = np.asarray(base, dtype=np.float64)
    if abs(base.sum() - 1) > 1e-9 or np.any(base < 0):
        raise ValueError("base must be a probability vector")
    return guided_distributions(xt[None, :], np.array([0]), np.array([pos]), base[None, :], cfg, t)[0]


def draw_revealed(xt, go, probs, cfg, t, rng):
    """Tokens for the positions flagged in ``go``, from guided distributions."""
    rows, cols = np.nonzero(go)
    base = probs[rows, cols]
    if cfg is not None:
        base = guided_distributions(xt, rows, cols, base, cfg, t)
    return sample_categorical(base, rng)


def guided_reverse_step(xt, t_prev, t, den, sched, cfg, rng, mask_id=MASK_ID):
    """Reverse step whose revealed tokens follow the guided distribution.

    The MASK-vs-token split of the step is left untouched; only the token
    that a revealed position takes is tilted.
    """
    check_time(t)
    check_time(t_prev, allow_zero=True)
    check_order(t_prev, t)
    xt, single = as_batch(xt)
    probs = den.predict(xt, np.full(xt.shape[0], t))
    check_denoiser_output(probs, xt, mask_id)
    reveal = unmask_probability(sched.alpha(t_prev), sched.alpha(t))
    u = rng.random(xt.shape)
    go = (xt == mask_id) & (u < reveal)
    out = xt.copy()
    if go.any():
        out[go] = draw_revealed(xt, go, probs, cfg, t, rng)
    return out[0] if single else out


# --------------------------------------------------------------------------
# noisy predictors
# --------------------------------------------------------------------------

def token_counts(seqs, K):
    """(B, K) bag-of-tokens counts."""
    seqs = np.atleast_2d(np.asarray(seqs, dtype=np.int64))
    out = np.zeros((seqs.shape[0], K))
    np.add.at(out, (np.repeat(np.arange(seqs.shape[0]), seqs.shape[1]), seqs.ravel()), 1.0)
    return out


class LinearTokenModel:
    """y = b + w . counts(x) + c * t. Used as a regressor or, through a sigmoid, a classifier."""

    def __init__(self, w, b, c=0.0, logistic=False):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = float(b)
        self.c = float(c)
        self.logistic = logistic

    def __call__(self, seqs, t):
        seqs = np.atleast_2d(seqs)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (seqs.shape[0],))
        z = self.b + token_counts(seqs, self.w.size) @ self.w + self.c * t
        return 1.0 / (1.0 + np.exp(-z)) if self.logistic else z


def _noised_design(corpus, y, K, sched, rng, copies):
    X = np.repeat(corpus, copies, axis=0)
    Y = np.repeat(np.asarray(y, dtype=np.float64), copies)
    t = sample_times(X.shape[0], sched, rng)
    Xt = forward_sample(X, t, sched, rng)
    F = np.concatenate([np.ones((Xt.shape[0], 1)), token_counts(Xt, K), t[:, None]], axis=1)
    return F, Y


def fit_noisy_regressor(corpus, y, K, sched, rng, copies=8, ridge=1e-3):
    """Ridge fit of a ``LinearTokenModel`` on forward-noised copies of ``corpus``."""
    F, Y = _noised_design(np.atleast_2d(corpus), y, K, sched, rng, copies)
    A = F.T @ F + ridge * np.eye(F.shape[1])
    coef = np.linalg.solve(A, F.T @ Y)
    return LinearTokenModel(coef[1:K + 1], coef[0], coef[K + 1])


def fit_noisy_classifier(corpus, y, K, sched, rng, copies=8, ridge=1e-3, iters=50):
    """Logistic ``LinearTokenModel`` fit by Newton's method on noised copies."""
    F, Y = _noised_design(np.atleast_2d(corpus), y, K, sched, rng, copies)
    coef = np.zeros(F.shape[1])
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(F @ coef)))
        g = F.T @ (p - Y) + ridge * coef
        H = (F * (p * (1 - p))[:, None]).T @ F + ridge * np.eye(F.shape[1])
        step = np.linalg.solve(H, g)
        coef -= step
        if np.max(np.abs(step)) < 1e-10:
            break
    return LinearTokenModel(coef[1:K + 1], coef[0], coef[K + 1], logistic=True)


def special_free(probs, n_special=len(SPECIALS)):
    """Zero the special-token columns and renormalize."""
    probs = probs.copy()
    probs[..., :n_special] = 0.0
    s = probs.sum(axis=-1, keepdims=True)
    return probs / np.where(s > 0, s, 1.0)
