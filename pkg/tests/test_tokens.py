import pytest
from hypothesis import given, strategies as st

from amdiff.errors import EmptyCorpus, SpecialTokenPresent, TooLong, UnknownToken
from amdiff.tokens import (
    CLS, MASK, MASK_ID, PAD, PAD_ID, Vocabulary, build_vocab, detokenize, pad_batch, split_tokens,
    strip_pad, tokenize,
)

ALPHABET = ["[C]", "[N]", "[O]", "[=C]", "[Branch1]", "[Ring1]", "[#N]", "[Cl]", "[NH1+1]"]
selfies_strings = st.lists(st.sampled_from(ALPHABET), max_size=30).map("".join)


def test_tokenize_two_tokens():
    v = build_vocab(["[C][N]"])
    assert len(tokenize("[C][N]", v)) == 2


def test_detokenize_examples():
    v = build_vocab(["[C]"])
    assert detokenize([v.index("[C]")] * 2, v) == "[C][C]"
    assert detokenize([], v) == ""
    with pytest.raises(SpecialTokenPresent):
        detokenize([v.index("[C]"), MASK_ID], v)


def test_too_long():
    v = build_vocab(["[C]"])
    assert len(tokenize("[C]" * 1024, v)) == 1024
    with pytest.raises(TooLong):
        tokenize("[C]" * 1025, v)


def test_unknown_token():
    v = build_vocab(["[C]"])
    with pytest.raises(UnknownToken):
        tokenize("[C][N]", v)


def test_build_vocab_single_token():
    v = build_vocab(["[C]"])
    assert v.tokens == (PAD, MASK, CLS, "[C]")
    assert v.K == 4


def test_build_vocab_duplicates_and_order():
    a = build_vocab(["[N][C][C]", "[O]", "[C]"])
    b = build_vocab(["[C]", "[O]", "[N][C][C]"])
    assert a == b
    assert a.tokens[3:] == ("[C]", "[N]", "[O]")


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocab([])


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["[C][=O]", "[N]"])
    path = tmp_path / "vocab.txt"
    v.save(path)
    assert path.read_text(encoding="utf-8").splitlines()[:3] == [PAD, MASK, CLS]
    assert Vocabulary.load(path) == v


def test_dot_is_a_token():
    assert split_tokens("[C].[N]") == ["[C]", ".", "[N]"]


def test_pad_batch_and_strip():
    batch = pad_batch([[3, 4], [5]])
    assert batch.tolist() == [[3, 4], [5, PAD_ID]]
    assert strip_pad(batch[1]).tolist() == [5]


@given(st.lists(selfies_strings, min_size=1, max_size=5))
def test_round_trip_property(corpus):
    v = build_vocab(corpus + ["[C]"])
    for s in corpus:
        ids = tokenize(s, v)
        assert detokenize(ids, v) == s
        assert list(tokenize(detokenize(ids, v), v)) == list(ids)


@given(st.lists(selfies_strings, min_size=1, max_size=6), st.randoms())
def test_vocab_order_independent_and_idempotent(corpus, r):
    shuffled = corpus[:]
    r.shuffle(shuffled)
    v = build_vocab(corpus)
    assert build_vocab(shuffled) == v
    assert build_vocab(corpus + corpus) == v
    assert len(set(v.tokens)) == v.K
    for i, tok in enumerate(v.tokens):
        assert v.index(tok) == i and v.token(i) == tok
