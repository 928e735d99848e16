"""Token-bigram fingerprints and Tanimoto similarity."""

from ..tokens import split_tokens


def token_fingerprint(s):
    toks = split_tokens(s)
    return set(zip(toks, toks[1:]))


def tanimoto(a, b):
    a, b = set(a), set(b)
    union = len(a | b)
    return 1.0 if union == 0 else len(a & b) / union


def max_tanimoto(query, corpus):
    """Highest similarity of fingerprint ``query`` to any fingerprint in ``corpus``."""
    return max((tanimoto(query, c) for c in corpus), default=0.0)
