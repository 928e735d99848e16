"""Denoisers: x_t, t -> per-position clean-token distributions.

Any object with ``K``, ``mask_id`` and ``predict(xt, t)`` returning a
(B, L, K) array works as a denoiser. Outputs must follow the SUBS rules:
zero mass on MASK and point masses at unmasked input positions.

Two implementations live here:

- ``OracleDenoiser`` enumerates a finite weighted dataset and returns the
  exact posterior marginals p(x0^l | x_t). It is the reference used by the
  exactness tests.
- ``ToyDenoiser`` is a small transformer (single-head attention + tanh MLP
  blocks, additive time vector) with hand-written backprop, trained by SGD
  with momentum.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .diffusion import LossConfig, NoiseSchedule, as_batch, forward_sample, sample_times
from .errors import (
    DimensionMismatch,
    DivergenceDetected,
    MissingCLS,
    NoConsistentSequence,
)
from .tokens import CLS_ID, MASK_ID, PAD_ID, SPECIALS, split_tokens

CHECKPOINT_VERSION = 1


def copy_through(probs, xt, mask_id=MASK_ID):
    """Overwrite unmasked positions with point masses at their own token."""
    keep = xt != mask_id
    if keep.any():
        probs[keep] = 0.0
        probs[keep, xt[keep]] = 1.0
    return probs


class UniformDenoiser:
    """Uniform over the non-special tokens. The no-information baseline."""

    def __init__(self, K, n_special=len(SPECIALS), mask_id=MASK_ID):
        self.K = K
        self.mask_id = mask_id
        self.row = np.zeros(K)
        self.row[n_special:] = 1.0 / (K - n_special)

    def predict(self, xt, t):
        xt, _ = as_batch(xt)
        probs = np.broadcast_to(self.row, xt.shape + (self.K,)).copy()
        return copy_through(probs, xt, self.mask_id)


class OracleDenoiser:
    """Exact p(x0^l | x_t) for a finite weighted dataset of equal-length rows."""

    def __init__(self, data, weights=None, K=None, mask_id=MASK_ID):
        data = np.atleast_2d(np.asarray(data, dtype=np.int64))
        if weights is None:
            weights = np.full(data.shape[0], 1.0 / data.shape[0])
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (data.shape[0],):
            raise DimensionMismatch("one weight per dataset row is required")
        if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-9):
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(data == mask_id):
            raise ValueError("dataset rows cannot contain MASK")
        self.data = np.ascontiguousarray(data)
        self.weights = weights
        self.K = int(data.max()) + 1 if K is None else K
        self.mask_id = mask_id

    def predict(self, xt, t=None):
        xt, _ = as_batch(xt)
        if xt.shape[1] != self.data.shape[1]:
            raise DimensionMismatch(f"input length {xt.shape[1]} != dataset length {self.data.shape[1]}")
        # many chains share a state; score each distinct row once
        uniq, inverse = np.unique(xt, axis=0, return_inverse=True)
        probs, ok = _kernels.oracle_marginals(self.data, self.weights, np.ascontiguousarray(uniq),
                                              self.mask_id, self.K)
        if not ok.all():
            raise NoConsistentSequence(f"no dataset row matches input {uniq[~ok][0].tolist()}")
        return probs[inverse.ravel()]

    def exact_loss(self, sched, n_quad=2000):
        """Exact expected dlm loss: enumerate mask patterns, Gauss-Legendre in t.

        Times are uniform on (eps, 1], matching ``dlm_loss``.
        """
        L = self.data.shape[1]
        patterns = ((np.arange(2 ** L)[:, None] >> np.arange(L)) & 1).astype(bool)
        # per pattern: expected sum of -log p over masked positions
        cost = np.zeros(len(patterns))
        for j, pat in enumerate(patterns):
            xt = np.where(pat[None, :], self.mask_id, self.data)
            probs = self.predict(xt)
            p = np.take_along_axis(probs, self.data[..., None], axis=-1)[..., 0]
            nll = np.where(pat[None, :], -np.log(np.where(pat[None, :], p, 1.0)), 0.0).sum(axis=1)
            cost[j] = self.weights @ nll
        k = patterns.sum(axis=1)
        nodes, w = np.polynomial.legendre.leggauss(n_quad)
        lo, hi = sched.eps, 1.0
        t = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        w = 0.5 * (hi - lo) * w
        # P(pattern | t) = t^k (1-t)^(L-k); weight 1/t; density 1/(1-eps)
        pt = t[:, None] ** k[None, :] * (1 - t[:, None]) ** (L - k[None, :])
        integrand = (pt * cost[None, :]).sum(axis=1) / t
        return float(w @ integrand) / (hi - lo)


# --------------------------------------------------------------------------
# toy transformer
# --------------------------------------------------------------------------

@dataclass
class ToyConfig:
    K: int
    d: int = 64
    layers: int = 2
    hidden: int = 64
    max_len: int = 64
    n_desc: int = 209
    init_scale: float = 0.1
    seed: int = 0


def init_params(cfg, zero=False):
    """Parameter dict. ``zero=True`` gives all-zero weights (uniform output)."""
    rng = np.random.default_rng(cfg.seed)
    d, m, K = cfg.d, cfg.hidden, cfg.K

    def w(*shape, scale=cfg.init_scale):
        return np.zeros(shape) if zero else rng.normal(0.0, scale, size=shape)

    p = {
        "emb": w(K, d, scale=1.0),
        "pos": w(cfg.max_len + 1, d),
        "tau": w(d),
    }
    for i in range(cfg.layers):
        p[f"l{i}.wq"] = w(d, d, scale=1.0 / np.sqrt(d))
        p[f"l{i}.wk"] = w(d, d, scale=1.0 / np.sqrt(d))
        p[f"l{i}.wv"] = w(d, d, scale=1.0 / np.sqrt(d))
        p[f"l{i}.wo"] = w(d, d, scale=cfg.init_scale / np.sqrt(d))
        p[f"l{i}.w1"] = w(d, m, scale=1.0 / np.sqrt(d))
        p[f"l{i}.b1"] = np.zeros(m)
        p[f"l{i}.w2"] = w(m, d, scale=cfg.init_scale / np.sqrt(m))
        p[f"l{i}.b2"] = np.zeros(d)
    p["out.w"] = w(d, K, scale=cfg.init_scale / np.sqrt(d))
    p["out.b"] = np.zeros(K)
    p["mtr.w"] = w(d, cfg.n_desc, scale=cfg.init_scale / np.sqrt(d))
    p["mtr.b"] = np.zeros(cfg.n_desc)
    return p


def _softmax(s, axis=-1):
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


def _trunk(p, cfg, ids, t):
    """Forward through the blocks. ``ids`` already start with CLS.

    Returns the final hidden states and the per-layer caches for backprop.
    """
    B, n = ids.shape
    if n > cfg.max_len + 1:
        raise DimensionMismatch(f"sequence of {n - 1} tokens exceeds max_len={cfg.max_len}")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    h = p["emb"][ids] + p["pos"][:n][None] + t[:, None, None] * p["tau"][None, None]
    keymask = np.where(ids == PAD_ID, -np.inf, 0.0)[:, None, :]
    c = 1.0 / np.sqrt(cfg.d)
    caches = []
    for i in range(cfg.layers):
        q = h @ p[f"l{i}.wq"]
        k = h @ p[f"l{i}.wk"]
        v = h @ p[f"l{i}.wv"]
        a = _softmax(q @ k.transpose(0, 2, 1) * c + keymask)
        o = a @ v
        h1 = h + o @ p[f"l{i}.wo"]
        g = np.tanh(h1 @ p[f"l{i}.w1"] + p[f"l{i}.b1"])
        h2 = h1 + g @ p[f"l{i}.w2"] + p[f"l{i}.b2"]
        caches.append((h, q, k, v, a, o, h1, g))
        h = h2
    return h, (ids, t, caches)


def _trunk_backward(p, cfg, dh, cache, grads):
    ids, t, caches = cache
    c = 1.0 / np.sqrt(cfg.d)
    for i in reversed(range(cfg.layers)):
        h, q, k, v, a, o, h1, g = caches[i]
        grads[f"l{i}.w2"] += np.einsum("bnm,bnd->md", g, dh)
        grads[f"l{i}.b2"] += dh.sum(axis=(0, 1))
        dz = (dh @ p[f"l{i}.w2"].T) * (1 - g * g)
        grads[f"l{i}.w1"] += np.einsum("bnd,bnm->dm", h1, dz)
        grads[f"l{i}.b1"] += dz.sum(axis=(0, 1))
        dh1 = dh + dz @ p[f"l{i}.w1"].T
        grads[f"l{i}.wo"] += np.einsum("bnd,bne->de", o, dh1)
        do = dh1 @ p[f"l{i}.wo"].T
        da = do @ v.transpose(0, 2, 1)
        dv = a.transpose(0, 2, 1) @ do
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * c
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        grads[f"l{i}.wq"] += np.einsum("bnd,bne->de", h, dq)
        grads[f"l{i}.wk"] += np.einsum("bnd,bne->de", h, dk)
        grads[f"l{i}.wv"] += np.einsum("bnd,bne->de", h, dv)
        dh = dh1 + dq @ p[f"l{i}.wq"].T + dk @ p[f"l{i}.wk"].T + dv @ p[f"l{i}.wv"].T
    np.add.at(grads["emb"], ids, dh)
    grads["pos"][:ids.shape[1]] += dh.sum(axis=0)
    grads["tau"] += np.einsum("b,bnd->d", t, dh)


def _with_cls(x):
    x, _ = as_batch(x)
    return np.concatenate([np.full((x.shape[0], 1), CLS_ID, dtype=np.int64), x], axis=1)


def _masked_logits(p, hidden):
    logits = hidden @ p["out.w"] + p["out.b"]
    logits[..., :len(SPECIALS)] = -np.inf
    return logits


def toy_predict(p, cfg, xt, t, mask_id=MASK_ID):
    xt, _ = as_batch(xt)
    h, _ = _trunk(p, cfg, _with_cls(xt), t)
    probs = _softmax(_masked_logits(p, h[:, 1:]))
    return copy_through(probs, xt, mask_id)


def extract_features(p, cfg, x0, eps=1e-3):
    """Final-layer CLS latent of the clean sequence at t = eps.

    ``x0`` must already begin with CLS.
    """
    x0, single = as_batch(x0)
    if x0.shape[1] == 0 or np.any(x0[:, 0] != CLS_ID):
        raise MissingCLS("feature extraction needs CLS at position 0")
    h, _ = _trunk(p, cfg, x0, eps)
    return h[0, 0] if single else h[:, 0]


def loss_and_grad(p, cfg, x0, xt, t, targets=None, lam=0.0, eps=1e-3, mask_id=MASK_ID):
    """Deterministic loss for fixed noise, with gradients for every parameter.

    loss = mean_b (1/t_b) sum_{masked l} -log p(x0_l)  +  lam * mean((y_hat - y)^2)

    where y_hat is the linear MTR head applied to the clean-input CLS feature.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    xt = np.asarray(xt, dtype=np.int64)
    B, L = x0.shape
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    h, cache = _trunk(p, cfg, _with_cls(xt), t)
    logits = _masked_logits(p, h[:, 1:])
    probs = _softmax(logits)
    masked = xt == mask_id
    pt = np.take_along_axis(probs, x0[..., None], axis=-1)[..., 0]
    wt = (1.0 / t)[:, None] * masked / B
    with np.errstate(divide="ignore"):
        dlm = float(np.sum(np.where(masked, -np.log(np.where(masked, pt, 1.0)), 0.0) * wt))
    dlogits = probs.copy()
    np.put_along_axis(dlogits, x0[..., None], np.take_along_axis(dlogits, x0[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= wt[..., None]
    dlogits[..., :len(SPECIALS)] = 0.0
    hid = h[:, 1:]
    grads["out.w"] += np.einsum("bld,blk->dk", hid, dlogits)
    grads["out.b"] += dlogits.sum(axis=(0, 1))
    dh = np.zeros_like(h)
    dh[:, 1:] = dlogits @ p["out.w"].T
    _trunk_backward(p, cfg, dh, cache, grads)

    mtr = 0.0
    if targets is not None and lam > 0:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != (B, cfg.n_desc):
            raise DimensionMismatch(f"targets must be ({B}, {cfg.n_desc}), got {targets.shape}")
        hc, cache_c = _trunk(p, cfg, _with_cls(x0), eps)
        feat = hc[:, 0]
        resid = feat @ p["mtr.w"] + p["mtr.b"] - targets
        mtr = float(np.mean(resid ** 2))
        dres = lam * 2.0 * resid / resid.size
        grads["mtr.w"] += feat.T @ dres
        grads["mtr.b"] += dres.sum(axis=0)
        dhc = np.zeros_like(hc)
        dhc[:, 0] = dres @ p["mtr.w"].T
        _trunk_backward(p, cfg, dhc, cache_c, grads)
    return dlm + lam * mtr, dlm, mtr, grads


@dataclass
class TrainConfig:
    stage1_steps: int = 300
    stage2_steps: int = 100
    batch: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    clip: float = 5.0
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    log_every: int = 10


class ToyDenoiser:
    """Trainable small transformer obeying the denoiser contract."""

    def __init__(self, cfg, params=None, desc_mean=None, desc_scale=None, tokens=None):
        self.cfg = cfg
        self.tokens = tokens
        self.params = init_params(cfg) if params is None else params
        self.K = cfg.K
        self.mask_id = MASK_ID
        self.desc_mean = np.zeros(cfg.n_desc) if desc_mean is None else np.asarray(desc_mean, dtype=np.float64)
        self.desc_scale = np.ones(cfg.n_desc) if desc_scale is None else np.asarray(desc_scale, dtype=np.float64)
        self.log = []

    def predict(self, xt, t):
        return toy_predict(self.params, self.cfg, xt, t, self.mask_id)

    def features(self, x0_with_cls, eps=1e-3):
        return extract_features(self.params, self.cfg, x0_with_cls, eps)

    def predict_descriptors(self, x0_with_cls, eps=1e-3):
        f = self.features(x0_with_cls, eps)
        z = f @ self.params["mtr.w"] + self.params["mtr.b"]
        return z * self.desc_scale + self.desc_mean

    def save(self, path):
        arrays = {f"p/{k}": v for k, v in self.params.items()}
        extra = {} if self.tokens is None else {"tokens": np.array("\n".join(self.tokens))}
        np.savez(path, format_version=np.array(CHECKPOINT_VERSION),
                 config=np.array(json.dumps(asdict(self.cfg))), **extra,
                 desc_mean=self.desc_mean, desc_scale=self.desc_scale, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            version = int(z["format_version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            cfg = ToyConfig(**json.loads(str(z["config"])))
            params = {k[2:]: z[k].copy() for k in z.files if k.startswith("p/")}
            tokens = str(z["tokens"]).split("\n") if "tokens" in z.files else None
            return cls(cfg, params, z["desc_mean"].copy(), z["desc_scale"].copy(), tokens)


def train_toy(corpus, targets, model_cfg, train_cfg=None, sched=None):
    """Two-stage SGD: DLM loss only, then DLM + lam * MTR.

    ``corpus`` is an (N, L) id matrix (PAD allowed); ``targets`` is
    (N, n_desc) or None. Targets are standardized per dimension before
    fitting; the scaling is kept on the returned model.
    """
    train_cfg = TrainConfig() if train_cfg is None else train_cfg
    sched = NoiseSchedule() if sched is None else sched
    corpus = np.atleast_2d(np.asarray(corpus, dtype=np.int64))
    if corpus.shape[0] == 0:
        raise ValueError("empty corpus")
    model = ToyDenoiser(model_cfg)
    if targets is not None:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != (corpus.shape[0], model_cfg.n_desc):
            raise DimensionMismatch(f"targets must be ({corpus.shape[0]}, {model_cfg.n_desc})")
        model.desc_mean = targets.mean(axis=0)
        sd = targets.std(axis=0)
        model.desc_scale = np.where(sd > 0, sd, 1.0)
        z_targets = (targets - model.desc_mean) / model.desc_scale
    rng = np.random.default_rng(train_cfg.seed)
    p = model.params
    vel = {k: np.zeros_like(v) for k, v in p.items()}
    total_steps = train_cfg.stage1_steps + train_cfg.stage2_steps
    for step in range(total_steps):
        stage = 1 if step < train_cfg.stage1_steps else 2
        idx = rng.integers(0, corpus.shape[0], size=train_cfg.batch)
        x0 = corpus[idx]
        t = sample_times(len(idx), sched, rng)
        xt = forward_sample(x0, t, sched, rng)
        lam = train_cfg.loss.lam if (stage == 2 and targets is not None) else 0.0
        tg = z_targets[idx] if lam > 0 else None
        loss, dlm, mtr, grads = loss_and_grad(p, model_cfg, x0, xt, t, tg, lam, sched.eps)
        if not np.isfinite(loss):
            raise DivergenceDetected(f"loss became {loss} at step {step}")
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not np.isfinite(norm):
            raise DivergenceDetected(f"gradient became non-finite at step {step}")
        scale = min(1.0, train_cfg.clip / norm) if train_cfg.clip and norm > 0 else 1.0
        for k in p:
            vel[k] = train_cfg.momentum * vel[k] - train_cfg.lr * scale * grads[k]
            p[k] += vel[k]
        if step % train_cfg.log_every == 0 or step == total_steps - 1:
            model.log.append({"step": step, "stage": stage, "loss": loss, "dlm": dlm, "mtr": mtr,
                              "grad_norm": norm})
    return model


# --------------------------------------------------------------------------
# descriptors
# --------------------------------------------------------------------------

DESCRIPTOR_LENGTH = 209
_DESC_ELEMENTS = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "H")
DESCRIPTOR_NAMES = (
    ("n_tokens", "n_atoms")
    + tuple(f"n_{el}" for el in _DESC_ELEMENTS)
    + ("n_branch", "n_ring", "n_double_prefix", "n_triple_prefix",
       "n_positive", "n_negative", "heteroatom_fraction", "halogen_fraction", "n_fragments")
)


def compute_descriptors(s, length=DESCRIPTOR_LENGTH):
    """Token-derived descriptor vector, zero-padded to ``length``.

    Layout is given by ``DESCRIPTOR_NAMES``; remaining slots are zero.
    """
    from .chem.selfies import _BRANCH, _RING, _atom_symbol

    if length < len(DESCRIPTOR_NAMES):
        raise ValueError(f"length must be at least {len(DESCRIPTOR_NAMES)}")
    out = np.zeros(length)
    if not s:
        return out
    toks = split_tokens(s)
    counts = dict.fromkeys(DESCRIPTOR_NAMES, 0.0)
    counts["n_fragments"] = 1.0
    for tok in toks:
        if tok == ".":
            counts["n_fragments"] += 1
            continue
        counts["n_tokens"] += 1
        if tok in ("[nop]", "[epsilon]"):
            continue
        b = _BRANCH.match(tok)
        r = _RING.match(tok)
        if b or r:
            counts["n_branch" if b else "n_ring"] += 1
            bond = (b or r)["bond"]
        else:
            order, atom, _ = _atom_symbol(tok)
            counts["n_atoms"] += 1
            if f"n_{atom.element}" in counts:
                counts[f"n_{atom.element}"] += 1
            if atom.charge > 0:
                counts["n_positive"] += 1
            elif atom.charge < 0:
                counts["n_negative"] += 1
            bond = {1: "", 2: "=", 3: "#"}[order]
        if bond == "=":
            counts["n_double_prefix"] += 1
        elif bond == "#":
            counts["n_triple_prefix"] += 1
    n_atoms = counts["n_atoms"]
    if n_atoms:
        hetero = n_atoms - counts["n_C"] - counts["n_H"]
        counts["heteroatom_fraction"] = hetero / n_atoms
        counts["halogen_fraction"] = sum(counts[f"n_{x}"] for x in ("F", "Cl", "Br", "I")) / n_atoms
    out[:len(DESCRIPTOR_NAMES)] = [counts[k] for k in DESCRIPTOR_NAMES]
    return out
