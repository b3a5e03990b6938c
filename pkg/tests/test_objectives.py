import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from translico import tensor as T
from translico.errors import ConfigError, DegenerateNorm, EmptyMaskSet, NoContent, NonFinite
from translico.objectives import (IGNORE, ContrastiveBatch, LossWeights, apply_masking,
                                  combined_loss, mlm_loss, paired_index, tcm_loss)
from translico.tokenizer import CLS, MASK, PAD, SEP, Role, TokenSequence

from oracles import mlm_naive, tcm_naive


def seq_with_content(n, pad=3):
    ids = [CLS] + list(range(10, 10 + n)) + [SEP] + [PAD] * pad
    roles = [Role.CLS] + [Role.CONTENT] * n + [Role.SEP] + [Role.PAD] * pad
    return TokenSequence(ids, roles)


def reps64(x):
    return T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- masking

def test_fifteen_percent_of_twenty_is_three():
    mb = apply_masking(seq_with_content(20), 0.15, np.random.default_rng(0))
    assert (mb.labels != IGNORE).sum() == 3
    assert mb.mask_positions.size == 3


def test_single_content_token_gets_masked():
    mb = apply_masking(seq_with_content(1), 0.15, np.random.default_rng(0))
    assert mb.mask_positions.tolist() == [1]
    assert mb.ids[1] == MASK and mb.roles[1] == Role.MASK and mb.labels[1] == 10


def test_masking_only_touches_content_and_is_deterministic():
    seq = seq_with_content(30)
    a = apply_masking(seq, 0.15, np.random.default_rng(42))
    b = apply_masking(seq, 0.15, np.random.default_rng(42))
    np.testing.assert_array_equal(a.ids, b.ids)
    assert set(a.mask_positions) <= set(seq.content_positions)
    keep = a.labels == IGNORE
    np.testing.assert_array_equal(a.ids[keep], seq.ids[keep])
    np.testing.assert_array_equal(a.labels[~keep], seq.ids[~keep])


def test_bert_corruption_mix():
    seq = seq_with_content(2000, pad=0)
    mb = apply_masking(seq, 0.5, np.random.default_rng(1), "bert-80-10-10", vocab_size=5000)
    chosen = mb.mask_positions
    frac_mask = np.mean(mb.ids[chosen] == MASK)
    frac_same = np.mean(mb.ids[chosen] == seq.ids[chosen])
    assert 0.75 < frac_mask < 0.85 and 0.07 < frac_same < 0.14


def test_masking_errors():
    empty = TokenSequence([CLS, SEP], [Role.CLS, Role.SEP])
    with pytest.raises(NoContent):
        apply_masking(empty, 0.15, np.random.default_rng(0))
    with pytest.raises(ValueError):
        apply_masking(seq_with_content(3), 1.0, np.random.default_rng(0))


# ---------------------------------------------------------------- MLM loss

def test_uniform_logits_give_log_v():
    logits = T.Tensor(np.zeros((4, 50)), dtype=np.float64)
    loss = mlm_loss(np.array([1, 7, 49, 0]), logits)
    assert abs(loss.item() - math.log(50)) <= 1e-9
    assert abs(math.log(50) - 3.9120) < 1e-4


def test_saturated_logits_give_zero():
    logits = np.zeros((3, 20))
    targets = np.array([2, 5, 19])
    logits[np.arange(3), targets] = 30.0
    loss = mlm_loss(targets, T.Tensor(logits, dtype=np.float64))
    assert 0 <= loss.item() <= 1e-9


def test_mlm_loss_matches_direct_softmax():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(2, 6, 9))
    labels = np.full((2, 6), IGNORE)
    labels[0, 2], labels[1, 4] = 3, 8
    loss = mlm_loss(labels, T.Tensor(logits, dtype=np.float64)).item()
    expected = mlm_naive([logits[0, 2], logits[1, 4]], [3, 8])
    assert abs(loss - expected) <= 1e-10
    # gathered-rows form gives the same value
    gathered = T.Tensor(np.stack([logits[0, 2], logits[1, 4]]), dtype=np.float64)
    assert abs(mlm_loss(labels, gathered).item() - expected) <= 1e-10


def test_mlm_loss_empty_mask_set():
    with pytest.raises(EmptyMaskSet):
        mlm_loss(np.full(4, IGNORE), T.Tensor(np.zeros((4, 5))))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(2, 30))
def test_mlm_loss_nonnegative(seed, m, v):
    rng = np.random.default_rng(seed)
    logits = T.Tensor(rng.normal(size=(m, v)) * 5, dtype=np.float64)
    assert mlm_loss(rng.integers(0, v, m), logits).item() >= 0


# ---------------------------------------------------------------- TCM loss

def test_single_pair_has_zero_loss():
    reps = reps64(np.random.default_rng(0).normal(size=(2, 8)))
    assert abs(tcm_loss(ContrastiveBatch(reps, paired_index(1))).item()) <= 1e-12


def test_identical_reps_give_log3():
    reps = reps64(np.tile([[0.3, -1.0, 2.0]], (4, 1)))
    assert abs(tcm_loss(ContrastiveBatch(reps, paired_index(2))).item() - math.log(3)) <= 1e-9


def test_large_temperature_limit():
    reps = reps64(np.random.default_rng(1).normal(size=(8, 16)))
    loss = tcm_loss(ContrastiveBatch(reps, paired_index(4), tau=1e6)).item()
    assert abs(loss - math.log(7)) <= 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_tcm_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    n, d = rng.integers(1, 9), rng.integers(2, 33)
    reps = rng.normal(size=(2 * n, d))
    pair_of = paired_index(n)
    tau = float(rng.uniform(0.05, 2.0))
    got = tcm_loss(ContrastiveBatch(reps64(reps), pair_of, tau)).item()
    assert abs(got - tcm_naive(reps, pair_of, tau)) <= 1e-10


def test_tcm_invariant_to_positive_rescaling():
    rng = np.random.default_rng(2)
    reps = rng.normal(size=(6, 5))
    base = tcm_loss(ContrastiveBatch(reps64(reps), paired_index(3))).item()
    scaled = reps * rng.uniform(0.01, 100, size=(6, 1))
    assert abs(tcm_loss(ContrastiveBatch(reps64(scaled), paired_index(3))).item() - base) <= 1e-6


def test_tcm_invariant_to_relabeling():
    rng = np.random.default_rng(4)
    reps = rng.normal(size=(8, 6))
    pair_of = paired_index(4)
    perm = rng.permutation(8)
    inv = np.argsort(perm)
    permuted_pairs = inv[pair_of[perm]]
    a = tcm_loss(ContrastiveBatch(reps64(reps), pair_of)).item()
    b = tcm_loss(ContrastiveBatch(reps64(reps[perm]), permuted_pairs)).item()
    assert abs(a - b) <= 1e-12


def test_tcm_decreases_when_positive_similarity_rises():
    # row 1 moves toward row 0 along the plane they span, away from nothing else
    reps = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0],
                     [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    pairs = paired_index(2)  # 0<->2, 1<->3
    before = tcm_loss(ContrastiveBatch(reps64(reps), pairs)).item()
    moved = reps.copy()
    moved[2] = [0.2, 0.0, 1.0, 0.0]  # s(0,2) up; s(2,1)=s(2,3)=0 unchanged
    after = tcm_loss(ContrastiveBatch(reps64(moved), pairs)).item()
    assert after < before


def test_tcm_zero_vector_raises():
    reps = reps64(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(DegenerateNorm):
        tcm_loss(ContrastiveBatch(reps, paired_index(1)))


def test_contrastive_batch_validation():
    reps = reps64(np.ones((4, 2)))
    with pytest.raises(ValueError):
        ContrastiveBatch(reps, np.array([0, 1, 2, 3]))
    with pytest.raises(ValueError):
        ContrastiveBatch(reps, np.array([1, 2, 3, 0]))
    with pytest.raises(ValueError):
        ContrastiveBatch(reps, paired_index(2), tau=0)


def test_tcm_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    params = {"r": reps64(rng.normal(size=(6, 4)))}
    err = T.finite_diff_check(lambda p: tcm_loss(ContrastiveBatch(p["r"], paired_index(3), 0.5)),
                              params, h=1e-6)
    assert err <= 1e-4


# ---------------------------------------------------------------- combined

def scalar(x):
    return T.Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def test_combined_arithmetic():
    assert combined_loss(scalar(2), scalar(3), scalar(5), LossWeights()).item() == 10


@pytest.mark.parametrize("weights, zero", [((1, 1, 0), [2]), ((0, 0, 1), [0, 1]), ((1, 0, 1), [1])])
def test_zero_weight_blocks_gradient(weights, zero):
    terms = [scalar(2.0), scalar(3.0), scalar(5.0)]
    combined_loss(*terms, LossWeights(*weights)).backward()
    for i, t in enumerate(terms):
        assert (t.grad == 0) if i in zero else (t.grad == 1)


def test_combined_rejects_non_finite():
    with pytest.raises(NonFinite):
        combined_loss(scalar(1), scalar(float("nan")), scalar(1), LossWeights())


def test_loss_weight_validation():
    with pytest.raises(ConfigError):
        LossWeights(0, 0, 0)
    with pytest.raises(ConfigError):
        LossWeights(-1, 1, 1)
