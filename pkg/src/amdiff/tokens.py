"""Vocabulary and tokenization of bracketed SELFIES strings."""

import re

import numpy as np

from .errors import EmptyCorpus, SpecialTokenPresent, TooLong, UnknownToken, UnsupportedToken

PAD, MASK, CLS = "[PAD]", "[MASK]", "[CLS]"
SPECIALS = (PAD, MASK, CLS)
PAD_ID, MASK_ID, CLS_ID = 0, 1, 2
MAX_LEN = 1024

_TOKEN = re.compile(r"\[[^\[\]]*\]")


def split_tokens(text):
    """Split a SELFIES string into its bracketed tokens.

    A '.' between fragments is kept as its own token.
    """
    out = []
    pos = 0
    for m in _TOKEN.finditer(text):
        for ch in text[pos:m.start()]:
            if ch != ".":
                raise UnsupportedToken(f"text outside brackets at offset {pos}: {text[pos:m.start()]!r}")
            out.append(".")
        out.append(m.group(0))
        pos = m.end()
    for ch in text[pos:]:
        if ch != ".":
            raise UnsupportedToken(f"text outside brackets: {text[pos:]!r}")
        out.append(".")
    return out


class Vocabulary:
    """Immutable token <-> id map. Specials occupy ids 0, 1, 2."""

    def __init__(self, tokens):
        tokens = tuple(tokens)
        if tokens[:3] != SPECIALS:
            raise ValueError("vocabulary must start with [PAD], [MASK], [CLS]")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._tokens = tokens
        self._index = {tok: i for i, tok in enumerate(tokens)}

    @property
    def tokens(self):
        return self._tokens

    def __len__(self):
        return len(self._tokens)

    @property
    def K(self):
        return len(self._tokens)

    pad_id = PAD_ID
    mask_id = MASK_ID
    cls_id = CLS_ID

    def index(self, token):
        try:
            return self._index[token]
        except KeyError:
            raise UnknownToken(f"token not in vocabulary: {token}") from None

    def token(self, i):
        return self._tokens[i]

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __hash__(self):
        return hash(self._tokens)

    def __repr__(self):
        return f"Vocabulary(K={self.K})"

    def special_mask(self):
        """Boolean (K,) array, True at special-token ids."""
        m = np.zeros(self.K, dtype=bool)
        m[:len(SPECIALS)] = True
        return m

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.strip())


def build_vocab(corpus):
    """Vocabulary of every token seen in ``corpus``: specials, then sorted."""
    seen = set()
    n = 0
    for text in corpus:
        n += 1
        seen.update(split_tokens(text))
    if n == 0:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    seen.difference_update(SPECIALS)
    return Vocabulary(SPECIALS + tuple(sorted(seen)))


def tokenize(text, vocab, max_len=MAX_LEN):
    toks = split_tokens(text)
    if len(toks) > max_len:
        raise TooLong(f"{len(toks)} tokens exceeds max_len={max_len}")
    return np.array([vocab.index(t) for t in toks], dtype=np.int64)


def detokenize(ids, vocab):
    ids = np.asarray(ids, dtype=np.int64).ravel()
    if ids.size and (ids.min() < 0 or ids.max() >= vocab.K):
        raise UnknownToken("id outside the vocabulary")
    if np.any(ids < len(SPECIALS)):
        raise SpecialTokenPresent("special token in sequence")
    return "".join(vocab.token(i) for i in ids)


def pad_batch(seqs, length=None, pad_id=PAD_ID):
    """Stack variable-length id arrays into an (N, length) matrix."""
    length = max(len(s) for s in seqs) if length is None else length
    out = np.full((len(seqs), length), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        if len(s) > length:
            raise TooLong(f"sequence {i} has {len(s)} tokens, batch length is {length}")
        out[i, :len(s)] = s
    return out


def strip_pad(ids, pad_id=PAD_ID):
    ids = np.asarray(ids)
    return ids[ids != pad_id]
