"""Generation loops: plain, guided and remasking.

The time grid is t_i = 1 - i/T for i = 0..T, and step i moves from t_i to
t_{i+1}. The remasking loop runs in three stages:

1. t > t_on: guided reverse steps with the stage-1 gammas.
2. t_off <= t <= t_on: alpha is frozen at alpha(t_on). Masked positions are
   revealed per the remasking step and a fixed share of the generated
   tokens is sent back to MASK. Stage-2 gammas apply.
3. t < t_off: as stage 1. The first step starts from the frozen alpha so the
   reveal probability matches the actual share of masked positions.

Every step records (stage, t, t_prev, alpha_t, alpha_prev, masked count) in
a trace.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .diffusion import as_batch, check_denoiser_output
from .errors import NegativeWeight
from .guidance import GuidanceConfig, draw_revealed
from .tokens import MASK_ID, SPECIALS


def remask_weights(alpha_prev, alpha_t, r):
    """(beta1, beta2) of the remasking step. beta1 + beta2 = 1 - alpha_t.

    Generic arithmetic: pass Fractions for exact results.
    """
    beta1 = 1 - alpha_prev - r * alpha_t
    beta2 = alpha_prev - (1 - r) * alpha_t
    return beta1, beta2


def _check_remask(alpha_prev, alpha_t, r):
    if not 0 <= r < 1:
        raise NegativeWeight(f"remask rate must lie in [0, 1), got {r}")
    beta1, beta2 = remask_weights(alpha_prev, alpha_t, r)
    if beta1 < 0 or beta2 < 0:
        raise NegativeWeight(f"remask weights negative: beta1={beta1}, beta2={beta2}")
    return beta1, beta2


def remask_step_alphas(xt, alpha_prev, alpha_t, probs, r, rng, guidance=None, t=None,
                       remask_count=None, mask_id=MASK_ID):
    """One remasking step on a (B, L) batch, given the two alphas.

    Masked positions are revealed with probability beta2 / (1 - alpha_t).
    Generated positions go back to MASK independently with probability r,
    or, when ``remask_count`` is given, exactly that many per row, chosen
    uniformly at random.
    """
    beta1, beta2 = _check_remask(alpha_prev, alpha_t, r)
    masked = xt == mask_id
    reveal = beta2 / (1 - alpha_t)
    u = rng.random(xt.shape)
    go = masked & (u < reveal)
    out = xt.copy()
    if go.any():
        out[go] = draw_revealed(xt, go, probs, guidance, t, rng)
    if remask_count is None:
        back = ~masked & (rng.random(xt.shape) < r)
    else:
        # random scores; the lowest remask_count[b] generated positions are picked
        score = np.where(masked, np.inf, rng.random(xt.shape))
        rank = np.argsort(np.argsort(score, axis=1, kind="stable"), axis=1, kind="stable")
        back = ~masked & (rank < np.asarray(remask_count)[:, None])
    out[back] = mask_id
    return out


def remask_reverse_step(xt, t_prev, t, den, sched, r_t, rng, mask_id=MASK_ID):
    """Reverse step with per-token remasking at rate ``r_t``."""
    xt, single = as_batch(xt)
    probs = den.predict(xt, np.full(xt.shape[0], t))
    check_denoiser_output(probs, xt, mask_id)
    out = remask_step_alphas(xt, sched.alpha(t_prev), sched.alpha(t), probs, r_t, rng, t=t, mask_id=mask_id)
    return out[0] if single else out


@dataclass
class RemaskSchedule:
    t_on: float = 0.55
    t_off: float = 0.45
    r_loop: float = 0.1
    loop_fraction: float = 0.1

    def __post_init__(self):
        if not 0 < self.t_off < self.t_on < 1:
            raise ValueError("need 0 < t_off < t_on < 1")
        if not 0 <= self.r_loop < 1:
            raise ValueError("r_loop must lie in [0, 1)")
        if not 0 <= self.loop_fraction <= 1:
            raise ValueError("loop_fraction must lie in [0, 1]")


def stage_of(t, remask):
    if t > remask.t_on:
        return 1
    if t >= remask.t_off:
        return 2
    return 3


@dataclass
class SamplerConfig:
    steps: int = 256
    length: int = 32
    n_samples: int = 1
    stage1_gammas: tuple = (15.0, 0.0)
    stage2_gammas: tuple = (0.0, 15.0)
    sigma_start: float = 0.5
    sigma_end: float = 0.2
    target: float = 1.0

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.sigma_start <= 0 or self.sigma_end <= 0:
            raise ValueError("sigmas must be positive")
        if self.length < 1 or self.n_samples < 1:
            raise ValueError("length and n_samples must be >= 1")

    def sigma(self, t):
        """Linear anneal: sigma_start at t=1, sigma_end at t=0."""
        return self.sigma_end + (self.sigma_start - self.sigma_end) * t


def time_grid(steps):
    return 1.0 - np.arange(steps + 1) / steps


def snap(t, steps):
    """Nearest grid point to ``t``."""
    return 1.0 - round((1.0 - t) * steps) / steps


@dataclass
class Trace:
    rows: list = field(default_factory=list)

    def add(self, **row):
        self.rows.append(row)

    def checksum(self):
        h = hashlib.sha256()
        for row in self.rows:
            h.update(repr(sorted(row.items())).encode())
        return h.hexdigest()


def _no_specials(probs, n_special=len(SPECIALS)):
    """Zero the special-token columns and renormalize."""
    if np.all(probs[..., :n_special] == 0):
        return probs
    probs = probs.copy()
    probs[..., :n_special] = 0.0
    s = probs.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise ValueError("denoiser puts all mass on special tokens")
    return probs / s


def sample(den, sched, cfg, guidance=None, remask=None, rng=None, trace=None, mask_id=MASK_ID):
    """Generate ``cfg.n_samples`` sequences of length ``cfg.length``.

    ``guidance`` is a GuidanceConfig whose gammas are replaced per stage by
    ``cfg.stage*_gammas`` (padded or truncated to its predictor count).
    Without ``remask`` every step is a plain (guided) reverse step.
    """
    rng = np.random.default_rng() if rng is None else rng
    trace = Trace() if trace is None else trace
    T = cfg.steps
    grid = time_grid(T)
    x = np.full((cfg.n_samples, cfg.length), mask_id, dtype=np.int64)

    def gammas_for(stage):
        if guidance is None:
            return None
        g = list(cfg.stage2_gammas if stage == 2 else cfg.stage1_gammas)
        g = (g + [0.0] * len(guidance.predictors))[:len(guidance.predictors)]
        return guidance.with_gammas(g)

    if remask is not None:
        t_on, t_off = snap(remask.t_on, T), snap(remask.t_off, T)
        frozen = sched.alpha(t_on)
    alpha_cur = sched.alpha(grid[0])
    for i in range(T):
        t, t_prev = grid[i], grid[i + 1]
        stage = 1
        if remask is not None:
            stage = 1 if t > t_on else (2 if t >= t_off else 3)
        if stage == 2:
            alpha_t = alpha_prev = frozen
        else:
            alpha_t, alpha_prev = alpha_cur, sched.alpha(t_prev)
        g = gammas_for(stage)
        probs = den.predict(x, np.full(x.shape[0], t))
        check_denoiser_output(probs, x, mask_id)
        probs = _no_specials(probs)
        if stage == 2:
            n_gen = (x != mask_id).sum(axis=1)
            count = np.rint(remask.loop_fraction * n_gen).astype(np.int64)
            x = remask_step_alphas(x, alpha_prev, alpha_t, probs, remask.r_loop, rng, g, t,
                                   remask_count=count, mask_id=mask_id)
        else:
            x = remask_step_alphas(x, alpha_prev, alpha_t, probs, 0.0, rng, g, t, mask_id=mask_id)
        alpha_cur = alpha_prev
        trace.add(step=i, stage=stage, t=float(t), t_prev=float(t_prev), alpha_t=float(alpha_t),
                  alpha_prev=float(alpha_prev), masked=int((x == mask_id).sum()))
    if np.any(x == mask_id):
        raise AssertionError("generation ended with masked positions")
    return x


def plain_sample(den, sched, steps, length, n_samples, rng, guidance=None, trace=None):
    """Reverse steps only: no remasking, fixed guidance."""
    cfg = SamplerConfig(steps=steps, length=length, n_samples=n_samples)
    if guidance is not None:
        cfg.stage1_gammas = tuple(guidance.gammas)
        cfg.stage2_gammas = tuple(guidance.gammas)
    return sample(den, sched, cfg, guidance, None, rng, trace)


def mic_guidance(regressor_fn, classifier_fn, cfg):
    """Two-predictor guidance: a regressor toward ``cfg.target`` and a classifier.

    The regressor's sigma follows ``cfg.sigma(t)``.
    """
    from .guidance import ClassifierPredictor, RegressorPredictor

    preds = [RegressorPredictor(regressor_fn, cfg.target, cfg.sigma, name="mic")]
    if classifier_fn is not None:
        preds.append(ClassifierPredictor(classifier_fn, name="peptide"))
    return GuidanceConfig(preds, [0.0] * len(preds))
