"""Molecule-strain fusion and task heads.

The molecule feature m queries the strain's genome rows and, separately, its
text rows:

    ctx_g = m W_rg + softmax((m W_qg)(E W_kg)^T / sqrt(d_a)) (E W_vg)
    ctx_t = m W_rt + softmax((m W_qt)(T W_kt)^T / sqrt(d_a)) (T W_vt)
    fused = [ctx_g, ctx_t]

Heads are ReLU MLPs. The classification and synergy heads end in a
sigmoid; the synergy head reads two fused vectors side by side.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyEnsemble, EmptyKeys

FUSED_WIDTH = 12294
HEAD_WIDTHS = (3073, 128)
HEADS = ("mic", "abx_class", "synergy")


@dataclass
class FusionConfig:
    mol_dim: int = 768
    genome_dim: int = 8192
    text_dim: int = 4096
    attn_dim: int = 768
    fused: int = FUSED_WIDTH
    genome_width: int = None  # width of the genome half; default fused // 2
    head_widths: tuple = HEAD_WIDTHS

    def __post_init__(self):
        if self.genome_width is None:
            self.genome_width = self.fused // 2
        if not 0 < self.genome_width < self.fused:
            raise ValueError("genome_width must lie strictly inside (0, fused)")

    @property
    def text_width(self):
        return self.fused - self.genome_width


@dataclass
class FusionParams:
    cfg: FusionConfig
    w: dict = field(default_factory=dict)


def _head_shapes(n_in, widths):
    dims = (n_in,) + tuple(widths) + (1,)
    return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def init_fusion_params(cfg=None, rng=None, scale=None, heads=HEADS):
    """All-zero parameters, or Gaussian ones when ``rng`` is given.

    Zero matrices come from ``np.zeros`` so the full-size default costs no
    memory until written.
    """
    cfg = FusionConfig() if cfg is None else cfg

    def mat(n, m):
        if rng is None:
            return np.zeros((n, m))
        return rng.normal(0.0, scale if scale is not None else 1.0 / np.sqrt(n), size=(n, m))

    w = {
        "q_g": mat(cfg.mol_dim, cfg.attn_dim), "k_g": mat(cfg.genome_dim, cfg.attn_dim),
        "v_g": mat(cfg.genome_dim, cfg.genome_width), "r_g": mat(cfg.mol_dim, cfg.genome_width),
        "q_t": mat(cfg.mol_dim, cfg.attn_dim), "k_t": mat(cfg.text_dim, cfg.attn_dim),
        "v_t": mat(cfg.text_dim, cfg.text_width), "r_t": mat(cfg.mol_dim, cfg.text_width),
    }
    for head in heads:
        n_in = cfg.fused * (2 if head == "synergy" else 1)
        for i, (a, b) in enumerate(_head_shapes(n_in, cfg.head_widths)):
            w[f"{head}.w{i}"] = mat(a, b)
            w[f"{head}.b{i}"] = np.zeros(b) if rng is None else rng.normal(0.0, 0.1, size=b)
    if "synergy.w0" in w and "mic.w0" in w:
        assert w["synergy.w0"].shape[0] == 2 * w["mic.w0"].shape[0]
    return FusionParams(cfg, w)


def attention_weights(q, keys, d_a):
    keys = np.atleast_2d(keys)
    if keys.shape[0] == 0:
        raise EmptyKeys("attention needs at least one key")
    s = keys @ q / np.sqrt(d_a)
    s = s - s.max()
    e = np.exp(s)
    return e / e.sum()


def cross_attention(q, keys, values, d_a, residual=0.0):
    """``residual`` + softmax(keys q / sqrt(d_a)) @ values."""
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if keys.shape[0] != values.shape[0]:
        raise DimensionMismatch(f"{keys.shape[0]} keys but {values.shape[0]} values")
    return residual + attention_weights(np.asarray(q, dtype=np.float64), keys, d_a) @ values


def fuse(mol_feat, ctx, params):
    cfg, w = params.cfg, params.w
    m = np.asarray(mol_feat, dtype=np.float64)
    if m.shape != (cfg.mol_dim,):
        raise DimensionMismatch(f"molecule feature must have shape ({cfg.mol_dim},), got {m.shape}")
    if ctx.genome.shape[1] != cfg.genome_dim:
        raise DimensionMismatch(f"genome rows have width {ctx.genome.shape[1]}, expected {cfg.genome_dim}")
    if ctx.text.shape[1] != cfg.text_dim:
        raise DimensionMismatch(f"text rows have width {ctx.text.shape[1]}, expected {cfg.text_dim}")
    g = cross_attention(m @ w["q_g"], ctx.genome @ w["k_g"], ctx.genome @ w["v_g"], cfg.attn_dim, m @ w["r_g"])
    t = cross_attention(m @ w["q_t"], ctx.text @ w["k_t"], ctx.text @ w["v_t"], cfg.attn_dim, m @ w["r_t"])
    return np.concatenate([g, t])


def head_forward(fused, head, params):
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}")
    w = params.w
    x = np.asarray(fused, dtype=np.float64)
    n_layers = len(params.cfg.head_widths) + 1
    if x.shape != (w[f"{head}.w0"].shape[0],):
        raise DimensionMismatch(f"{head} head expects width {w[f'{head}.w0'].shape[0]}, got {x.shape}")
    for i in range(n_layers):
        x = x @ w[f"{head}.w{i}"] + w[f"{head}.b{i}"]
        if i < n_layers - 1:
            x = np.maximum(x, 0.0)
    z = float(x[0])
    return z if head == "mic" else float(1.0 / (1.0 + np.exp(-z)))


def predict(mol_feat, ctx, params, head="mic", partner=None):
    """Fuse and run a head. ``synergy`` needs ``partner``, a second molecule feature."""
    f = fuse(mol_feat, ctx, params)
    if head == "synergy":
        if partner is None:
            raise DimensionMismatch("synergy needs two molecules")
        f = np.concatenate([f, fuse(partner, ctx, params)])
    return head_forward(f, head, params)


def ensemble_predict(models, x):
    """Mean of ``model(x)`` over the members."""
    models = list(models)
    if not models:
        raise EmptyEnsemble("ensemble has no members")
    return float(np.mean([m(x) for m in models]))


# --------------------------------------------------------------------------
# head training on precomputed fused vectors
# --------------------------------------------------------------------------

def head_loss_and_grad(X, y, head, params):
    """Batch loss of one head and its gradients; the fusion maps stay fixed.

    MSE for ``mic``, binary cross-entropy on the logit for the other heads.
    ``X`` is (B, n_in) fused vectors, ``y`` is (B,).
    """
    w = params.w
    n_layers = len(params.cfg.head_widths) + 1
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.shape[1] != w[f"{head}.w0"].shape[0] or y.shape != (X.shape[0],):
        raise DimensionMismatch(f"{head} head expects ({len(y)}, {w[f'{head}.w0'].shape[0]}) inputs")
    acts = [X]
    for i in range(n_layers):
        z = acts[-1] @ w[f"{head}.w{i}"] + w[f"{head}.b{i}"]
        acts.append(np.maximum(z, 0.0) if i < n_layers - 1 else z[:, 0])
    z = acts[-1]
    B = X.shape[0]
    if head == "mic":
        loss = float(np.mean((z - y) ** 2))
        dz = 2.0 * (z - y) / B
    else:
        # log(1 + e^z) - y z, written to stay finite for large |z|
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        dz = (1.0 / (1.0 + np.exp(-z)) - y) / B
    grads = {}
    d = dz[:, None]
    for i in reversed(range(n_layers)):
        grads[f"{head}.w{i}"] = acts[i].T @ d
        grads[f"{head}.b{i}"] = d.sum(axis=0)
        if i:
            d = (d @ w[f"{head}.w{i}"].T) * (acts[i] > 0)
    return loss, grads


def train_head(X, y, head, params, steps=200, lr=0.01, momentum=0.9, batch=32, seed=0):
    """SGD with momentum on one head. Updates ``params`` in place; returns the loss log."""
    rng = np.random.default_rng(seed)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    vel = {}
    log = []
    for step in range(steps):
        idx = rng.integers(0, X.shape[0], size=min(batch, X.shape[0]))
        loss, grads = head_loss_and_grad(X[idx], y[idx], head, params)
        if not np.isfinite(loss):
            raise FloatingPointError(f"head loss became {loss} at step {step}")
        for k, g in grads.items():
            vel[k] = momentum * vel.get(k, 0.0) - lr * g
            params.w[k] = params.w[k] + vel[k]
        log.append(loss)
    return log
