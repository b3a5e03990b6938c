from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from translico.errors import InsufficientData
from translico.scripts import ScriptTag, encipher
from translico.tokenizer import (CLS, N_BYTES, N_SPECIAL, PAD, SEP, Role, Vocab, chunks,
                                 decode, encode, stack, train_vocab)

BASE = N_SPECIAL + N_BYTES

CORPUS = [
    "the cat sat on the mat", "a cat and a hat", "the hat is on the cat",
    encipher("the cat sat on the mat", ScriptTag.TOYA), "salon rojo", "  double  spaces ",
]


def hand_bpe_first_merge(words):
    """Count adjacent symbol pairs by hand and pick the winner."""
    counts = Counter()
    for w in words:
        for a, b in zip(w, w[1:]):
            counts[(a, b)] += 1
    top = max(counts.values())
    return min(p for p, c in counts.items() if c == top)


def test_single_merge_on_repeated_letter():
    alphabet = 2  # "▁" and "a"
    vocab = train_vocab(["aaaa aaaa"], target_size=BASE + alphabet + 1)
    assert vocab.merges == [("a", "a")]
    assert hand_bpe_first_merge(chunks("aaaa aaaa")) == ("a", "a")
    assert vocab.tokens[-1] == "aa"


def test_merge_order_ties_break_lexicographically():
    vocab = train_vocab(["ab cd"], target_size=BASE + 5 + 1)
    # pairs (▁,a), (a,b), (▁,c), (c,d) all count 1: smallest is ("a", "b")
    assert vocab.merges[0] == ("a", "b")


def test_first_merge_matches_hand_count():
    vocab = train_vocab(CORPUS, target_size=400)
    words = [w for t in CORPUS for w in chunks(t)]
    assert vocab.merges[0] == hand_bpe_first_merge(words)


def test_training_is_deterministic():
    assert train_vocab(CORPUS, 400, seed=1).merges == train_vocab(CORPUS, 400, seed=1).merges


def test_specials_are_fixed():
    vocab = train_vocab(CORPUS, 400)
    assert vocab.tokens[:5] == ["[pad]", "[unk]", "[cls]", "[sep]", "[mask]"]
    assert vocab.specials == {"pad": 0, "unk": 1, "cls": 2, "sep": 3, "mask": 4}


def test_too_small_target_raises():
    with pytest.raises(InsufficientData):
        train_vocab(CORPUS, target_size=BASE + 3)


def test_round_trip_on_training_sentences():
    vocab = train_vocab(CORPUS, 400)
    for s in CORPUS:
        assert decode(encode(s, vocab, 128).ids, vocab) == s


def test_empty_text():
    vocab = train_vocab(CORPUS, 300)
    seq = encode("", vocab, 8)
    assert seq.ids.tolist() == [CLS, SEP] + [PAD] * 6
    assert seq.roles.tolist() == [Role.CLS, Role.SEP] + [Role.PAD] * 6


def test_truncation_keeps_max_len_and_sep():
    vocab = train_vocab(["a b c d e f g h"], BASE + 10)
    text = " ".join(["a"] * 30)
    seq = encode(text, vocab, 20)
    assert len(seq) == 20
    assert seq.ids[-1] == SEP and seq.ids[0] == CLS
    assert (seq.roles == Role.CONTENT).sum() == 18


def test_greedy_longest_match_prefers_merged_token():
    vocab = train_vocab(["hello hello hello"], 400)
    ids = encode("hello", vocab, 8).ids
    content = [i for i in ids if i >= N_SPECIAL]
    assert len(content) == 1 and vocab.tokens[content[0]] == "▁hello"


@settings(max_examples=300, deadline=None)
@given(st.text())
def test_encode_is_total_and_round_trips(s):
    vocab = train_vocab(CORPUS, 300)
    seq = encode(s, vocab, 4096)
    assert seq.ids.max() < len(vocab)
    if len(s.encode()) < 3000 and "▁" not in s:
        assert decode(seq.ids, vocab) == s


def test_save_load(tmp_path):
    vocab = train_vocab(CORPUS, 350)
    vocab.save(tmp_path / "v.json")
    again = Vocab.load(tmp_path / "v.json")
    assert again.tokens == vocab.tokens and again.merges == vocab.merges
    assert encode("the cat", again).ids.tolist() == encode("the cat", vocab).ids.tolist()


def test_stack_trims_common_padding():
    vocab = train_vocab(CORPUS, 300)
    a, b = encode("the cat", vocab, 32), encode("a", vocab, 32)
    ids, roles = stack([a, b])
    width = int((a.roles != Role.PAD).sum())
    assert ids.shape == roles.shape == (2, width)
    np.testing.assert_array_equal(ids[0], a.ids[:width])
