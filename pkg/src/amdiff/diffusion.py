"""Absorbing-state (masking) diffusion over token sequences.

Forward process: every position keeps its clean token with probability
alpha(t) and becomes MASK otherwise. With the log-linear schedule
alpha(t) = exp(-r(t)), r(t) = -log(1 - t), so alpha(t) = 1 - t.

The reverse process unmasks a masked position between times t and s < t
with probability (alpha(s) - alpha(t)) / (1 - alpha(t)), drawing the token
from the denoiser's clean-token distribution; unmasked positions are copied.

PAD positions are treated as structure rather than content: they are never
masked, always copied and never scored.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import sample_categorical
from .errors import DenoiserContractViolation, DimensionMismatch, TimeOrder, TimeOutOfRange
from .tokens import MASK_ID, PAD_ID

PROB_ATOL = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "log_linear"
    eps: float = 1e-3

    def __post_init__(self):
        if self.kind != "log_linear":
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")

    def alpha(self, t):
        """Survival probability. Works on floats, arrays and Fractions."""
        return 1 - t

    def rate(self, t):
        """Cumulative masking rate r(t) = -log(alpha(t))."""
        return -np.log1p(-np.asarray(t, dtype=np.float64))

    def loss_weight(self, t):
        """-alpha'(t) / (1 - alpha(t)); equals 1/t here."""
        return 1.0 / np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.1
    t_samples: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.t_samples < 1:
            raise ValueError("t_samples must be >= 1")


def check_time(t, allow_zero=False):
    t = np.asarray(t, dtype=np.float64)
    lo_ok = (t >= 0) if allow_zero else (t > 0)
    if not np.all(lo_ok & (t <= 1)) or not np.all(np.isfinite(t)):
        raise TimeOutOfRange(f"time outside {'[0' if allow_zero else '(0'}, 1]: {t}")
    return t


def check_order(t_prev, t):
    if np.any(np.asarray(t_prev) >= np.asarray(t)):
        raise TimeOrder(f"need t_prev < t, got t_prev={t_prev}, t={t}")


def forward_sample(x0, t, sched, rng, mask_id=MASK_ID, pad_id=PAD_ID):
    """Mask each non-PAD position of ``x0`` independently with prob 1 - alpha(t).

    ``x0`` is (L,) or (B, L); ``t`` is a scalar or a (B,) array.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    t = check_time(t)
    if np.any(x0 == mask_id):
        raise ValueError("clean sequence contains MASK")
    alpha = sched.alpha(t)
    if x0.ndim == 2 and alpha.ndim == 1:
        alpha = alpha[:, None]
    keep = rng.random(x0.shape) < alpha
    keep |= x0 == pad_id
    return np.where(keep, x0, mask_id)


def unmask_probability(alpha_prev, alpha_t):
    """Chance that a masked position is revealed between the two times.

    Generic arithmetic, so Fractions give exact answers.
    """
    return (alpha_prev - alpha_t) / (1 - alpha_t)


def posterior_from_alphas(xt_tok, x0_tok, alpha_prev, alpha_t, K, mask_id=MASK_ID):
    """q(x_s | x_t, x_0) as a length-K vector, given alpha(s) and alpha(t)."""
    p = np.zeros(K)
    if xt_tok != mask_id:
        p[xt_tok] = 1.0
        return p
    if x0_tok == mask_id:
        raise ValueError("clean token cannot be MASK")
    reveal = unmask_probability(alpha_prev, alpha_t)
    p[mask_id] = (1 - alpha_prev) / (1 - alpha_t)
    p[x0_tok] += reveal
    return p


def posterior(xt_tok, x0_tok, t_prev, t, sched, K, mask_id=MASK_ID):
    check_time(t)
    check_time(t_prev, allow_zero=True)
    check_order(t_prev, t)
    return posterior_from_alphas(xt_tok, x0_tok, sched.alpha(t_prev), sched.alpha(t), K, mask_id)


def check_denoiser_output(probs, xt, mask_id=MASK_ID, atol=PROB_ATOL):
    """Raise unless ``probs`` is a valid (B, L, K) SUBS denoiser output for ``xt``."""
    if probs.ndim != 3 or probs.shape[:2] != xt.shape:
        raise DenoiserContractViolation(f"output shape {probs.shape} does not match input {xt.shape}")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise DenoiserContractViolation("denoiser output has negative or non-finite entries")
    if np.any(probs[..., mask_id] > 0):
        raise DenoiserContractViolation("denoiser assigns probability to MASK")
    s = probs.sum(axis=-1)
    if np.any(np.abs(s - 1) > atol):
        raise DenoiserContractViolation(f"denoiser rows do not sum to 1 (worst {np.abs(s - 1).max():.3g})")


def as_batch(xt):
    xt = np.asarray(xt, dtype=np.int64)
    return (xt[None, :], True) if xt.ndim == 1 else (xt, False)


def reverse_mixture(probs_x0, alpha_prev, alpha_t, mask_id=MASK_ID):
    """Full reverse-step distribution at masked positions, (B, L, K)."""
    reveal = unmask_probability(alpha_prev, alpha_t)
    out = probs_x0 * reveal
    out[..., mask_id] += 1 - reveal
    return out


def reverse_step_alphas(xt, alpha_prev, alpha_t, probs_x0, rng, mask_id=MASK_ID):
    """Reverse step given the survival probabilities and a denoiser output.

    The reveal decision is drawn first for every position, then a token is
    drawn only where a masked position is revealed. This is the same mixture
    as drawing from MASK-or-token in one go.
    """
    masked = xt == mask_id
    reveal = unmask_probability(alpha_prev, alpha_t)
    u = rng.random(xt.shape)
    go = masked & (u < reveal)
    out = xt.copy()
    if go.any():
        out[go] = sample_categorical(probs_x0[go], rng)
    return out


def reverse_step(xt, t_prev, t, den, sched, rng, mask_id=MASK_ID):
    """One ancestral step x_t -> x_{t_prev} using ``den`` for the clean-token law."""
    check_time(t)
    check_time(t_prev, allow_zero=True)
    check_order(t_prev, t)
    xt, single = as_batch(xt)
    probs = den.predict(xt, np.full(xt.shape[0], t))
    check_denoiser_output(probs, xt, mask_id)
    out = reverse_step_alphas(xt, sched.alpha(t_prev), sched.alpha(t), probs, rng, mask_id)
    return out[0] if single else out


def dlm_term(x0, xt, t, probs, mask_id=MASK_ID):
    """(1/t) * sum over masked positions of -log p(x0), per row.

    Unmasked positions contribute log 1 = 0 under copy-through, so only
    masked positions are summed.
    """
    x0, _ = as_batch(x0)
    xt, _ = as_batch(xt)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x0.shape[0],))
    p_true = np.take_along_axis(probs, x0[..., None], axis=-1)[..., 0]
    masked = xt == mask_id
    with np.errstate(divide="ignore"):
        nll = np.where(masked, -np.log(np.where(masked, p_true, 1.0)), 0.0)
    return nll.sum(axis=1) / t


def sample_times(n, sched, rng):
    """Uniform times on (eps, 1]."""
    return sched.eps + (1 - sched.eps) * (1 - rng.random(n))


def dlm_loss(x0, den, sched, cfg, rng, chunk=65536, mask_id=MASK_ID):
    """Monte-Carlo estimate of the masked-diffusion NELBO, averaged over rows.

    Each row of ``x0`` is scored with ``cfg.t_samples`` independent
    (t, x_t) draws, t uniform on (eps, 1].
    """
    x0, _ = as_batch(x0)
    B = x0.shape[0]
    rows = np.repeat(np.arange(B), cfg.t_samples)
    total = 0.0
    for lo in range(0, rows.size, chunk):
        idx = rows[lo:lo + chunk]
        x = x0[idx]
        t = sample_times(idx.size, sched, rng)
        xt = forward_sample(x, t, sched, rng, mask_id)
        probs = den.predict(xt, t)
        check_denoiser_output(probs, xt, mask_id)
        total += dlm_term(x, xt, t, probs, mask_id).sum()
    return total / rows.size


def mtr_loss(features, targets, head=None):
    """Mean squared error of descriptor predictions.

    ``head`` is an optional (W, b) linear map applied to ``features``;
    without it ``features`` are taken to be the predictions.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if head is not None:
        W, b = head
        if features.shape[-1] != W.shape[0]:
            raise DimensionMismatch(f"features have width {features.shape[-1]}, head expects {W.shape[0]}")
        pred = features @ W + b
    else:
        pred = features
    if pred.shape != targets.shape:
        raise DimensionMismatch(f"prediction shape {pred.shape} != target shape {targets.shape}")
    return float(np.mean((pred - targets) ** 2))


def combined_loss(dlm, mtr, cfg):
    return dlm + cfg.lam * mtr
