"""Hot inner loops, with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``AMDIFF_DISABLE_NUMBA`` is
unset (or "0"). Both paths consume the same pre-drawn uniforms, so they
return identical results; tests and ``benchmarks/bench_kernels.py`` rely on
that.
"""

import os

import numpy as np

_DISABLED = os.environ.get("AMDIFF_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by AMDIFF_DISABLE_NUMBA")
    import numba as nb
    HAVE_NUMBA = True
except ImportError:
    nb = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def categorical_sample_np(probs, u):
    """Inverse-CDF draw per row: smallest k with cumsum(probs)[k] > u."""
    c = np.cumsum(probs, axis=1)
    idx = (c <= u[:, None]).sum(axis=1)
    over = idx >= probs.shape[1]
    if over.any():
        # rounding pushed u past the total mass: take the last positive entry
        pos = probs[over] > 0
        last = probs.shape[1] - 1 - np.argmax(pos[:, ::-1], axis=1)
        idx[over] = last
    return idx.astype(np.int64)


def oracle_marginals_np(data, weights, xt, mask_id, vocab_size):
    """Per-position posterior marginals of a finite weighted dataset.

    Returns ``(probs, ok)`` where ``ok[b]`` is False when no dataset row is
    consistent with the unmasked tokens of ``xt[b]``.
    """
    B, L = xt.shape
    unmasked = xt != mask_id
    # (B, N): all unmasked positions agree
    agree = (data[None, :, :] == xt[:, None, :]) | ~unmasked[:, None, :]
    consistent = agree.all(axis=2)
    w = consistent * weights[None, :]
    total = w.sum(axis=1)
    ok = total > 0
    onehot = np.zeros((data.shape[0], L, vocab_size))
    np.put_along_axis(onehot, data[:, :, None], 1.0, axis=2)
    probs = np.einsum("bn,nlk->blk", w, onehot)
    denom = np.where(ok, total, 1.0)
    probs /= denom[:, None, None]
    return probs, ok


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @nb.njit(cache=True)
    def categorical_sample_nb(probs, u):
        n, k = probs.shape
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            acc = 0.0
            chosen = -1
            for j in range(k):
                acc += probs[i, j]
                if acc > u[i]:
                    chosen = j
                    break
            if chosen < 0:
                for j in range(k - 1, -1, -1):
                    if probs[i, j] > 0:
                        chosen = j
                        break
            out[i] = chosen
        return out

    @nb.njit(cache=True)
    def oracle_marginals_nb(data, weights, xt, mask_id, vocab_size):
        B, L = xt.shape
        N = data.shape[0]
        probs = np.zeros((B, L, vocab_size))
        ok = np.zeros(B, dtype=np.bool_)
        for b in range(B):
            total = 0.0
            for n in range(N):
                good = True
                for pos in range(L):
                    tok = xt[b, pos]
                    if tok != mask_id and tok != data[n, pos]:
                        good = False
                        break
                if good:
                    w = weights[n]
                    total += w
                    for pos in range(L):
                        probs[b, pos, data[n, pos]] += w
            if total > 0:
                ok[b] = True
                for pos in range(L):
                    for k in range(vocab_size):
                        probs[b, pos, k] /= total
        return probs, ok

    categorical_sample = categorical_sample_nb
    oracle_marginals = oracle_marginals_nb
else:
    categorical_sample_nb = None
    oracle_marginals_nb = None
    categorical_sample = categorical_sample_np
    oracle_marginals = oracle_marginals_np


def sample_categorical(probs, rng):
    """Draw one index per row of ``probs`` (any leading shape) using ``rng``."""
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    lead = probs.shape[:-1]
    flat = probs.reshape(-1, probs.shape[-1])
    u = rng.random(flat.shape[0])
    if flat.shape[0] == 0:
        return np.zeros(lead, dtype=np.int64)
    return categorical_sample(flat, u).reshape(lead)
