"""Masked-LM and transliteration-contrastive losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, EmptyMaskSet, NoContent, NonFinite, ShapeMismatch
from .tensor import Tensor
from .tokenizer import MASK, N_SPECIAL, Role, TokenSequence

IGNORE = -100
CORRUPTIONS = ("pure-mask", "bert-80-10-10")


@dataclass
class MaskedBatch:
    ids: np.ndarray
    roles: np.ndarray
    labels: np.ndarray  # original id at masked positions, IGNORE elsewhere

    @property
    def mask_positions(self) -> np.ndarray:
        """Flat indices of the masked positions."""
        return np.flatnonzero(self.labels.reshape(-1) != IGNORE)


@dataclass(frozen=True)
class LossWeights:
    mlm_orig: float = 1.0
    mlm_trans: float = 1.0
    tcm: float = 1.0

    def __post_init__(self):
        w = (self.mlm_orig, self.mlm_trans, self.tcm)
        if any(x < 0 or not math.isfinite(x) for x in w) or not any(x > 0 for x in w):
            raise ConfigError(f"loss weights must be finite, >= 0, and not all zero: {w}")


@dataclass
class ContrastiveBatch:
    reps: Tensor  # (2N, d)
    pair_of: np.ndarray  # partner index of every row
    tau: float = 1.0

    def __post_init__(self):
        self.pair_of = np.asarray(self.pair_of, dtype=np.int64)
        n = self.reps.shape[0]
        idx = np.arange(n)
        if n % 2 or self.pair_of.shape != (n,):
            raise ValueError("need an even number of representations and one partner each")
        if np.any(self.pair_of == idx) or np.any(self.pair_of[self.pair_of] != idx):
            raise ValueError("pair_of must be an involution without fixed points")
        if not self.tau > 0:
            raise ValueError("temperature must be positive")


def paired_index(n_pairs: int) -> np.ndarray:
    """Partner map for rows laid out as [orig_1..orig_N, trans_1..trans_N]."""
    idx = np.arange(n_pairs)
    return np.concatenate([idx + n_pairs, idx])


def n_masked(content_len: int, mask_rate: float) -> int:
    return max(1, math.floor(mask_rate * content_len + 1e-9))


def apply_masking(seq: TokenSequence, mask_rate: float, rng: np.random.Generator,
                  strategy: str = "pure-mask", vocab_size: int | None = None) -> MaskedBatch:
    """Corrupt ``floor(rate * content)`` (at least one) content positions.

    ``pure-mask`` replaces every chosen token with [mask]. ``bert-80-10-10``
    uses [mask] / a random token / the original token with those odds.
    """
    if not 0 < mask_rate < 1:
        raise ValueError(f"mask_rate must be in (0, 1), got {mask_rate}")
    if strategy not in CORRUPTIONS:
        raise ValueError(f"unknown corruption strategy {strategy!r}")
    content = seq.content_positions
    if content.size == 0:
        raise NoContent("sequence has no content tokens to mask")
    chosen = np.sort(rng.choice(content, size=n_masked(content.size, mask_rate), replace=False))
    ids, roles = seq.ids.copy(), seq.roles.copy()
    labels = np.full(ids.shape, IGNORE, dtype=np.int64)
    labels[chosen] = ids[chosen]
    if strategy == "pure-mask":
        ids[chosen] = MASK
        roles[chosen] = Role.MASK
    else:
        if vocab_size is None:
            raise ValueError("bert-80-10-10 needs vocab_size")
        u = rng.random(chosen.size)
        to_mask = chosen[u < 0.8]
        to_rand = chosen[(u >= 0.8) & (u < 0.9)]
        ids[to_mask] = MASK
        roles[to_mask] = Role.MASK
        ids[to_rand] = rng.integers(N_SPECIAL, vocab_size, size=to_rand.size)
    return MaskedBatch(ids, roles, labels)


def stack_masked(batches: Sequence[MaskedBatch]) -> MaskedBatch:
    """Stack equal-length single-sequence batches into (B, T) arrays."""
    return MaskedBatch(np.stack([b.ids for b in batches]), np.stack([b.roles for b in batches]),
                       np.stack([b.labels for b in batches]))


def mlm_loss(labels, logits: Tensor) -> Tensor:
    """Mean negative log-likelihood of the original tokens over masked positions.

    ``logits`` has one row per entry of ``labels`` (same leading shape) or
    one row per masked position in flat order.
    """
    labels = np.asarray(labels.labels if isinstance(labels, MaskedBatch) else labels).reshape(-1)
    keep = np.flatnonzero(labels != IGNORE)
    if keep.size == 0:
        raise EmptyMaskSet("no masked positions")
    v = logits.shape[-1]
    flat = T.reshape(logits, (-1, v))
    if flat.shape[0] == labels.size:
        if keep.size != labels.size:
            flat = T.embed_lookup(flat, keep)
    elif flat.shape[0] != keep.size:
        raise ShapeMismatch(f"logits rows {flat.shape[0]} vs {keep.size} masked positions")
    return T.cross_entropy(flat, labels[keep])


def tcm_loss(batch: ContrastiveBatch) -> Tensor:
    """InfoNCE over 2N anchors: each row's partner is the positive, the other 2N-2 rows are negatives."""
    n = batch.reps.shape[0]
    sims = T.scale(T.cosine_similarity(batch.reps, batch.reps), 1.0 / batch.tau)
    self_mask = np.zeros((n, n), dtype=sims.dtype)
    np.fill_diagonal(self_mask, -1e30)
    logp = T.log_softmax(sims + Tensor(self_mask), axis=-1)
    return T.scale(T.tmean(logp[np.arange(n), batch.pair_of]), -1.0)


def combined_loss(l_mlm: Tensor, l_mlm_trans: Tensor, l_tcm: Tensor, w: LossWeights) -> Tensor:
    for name, term in (("mlm_orig", l_mlm), ("mlm_trans", l_mlm_trans), ("tcm", l_tcm)):
        if not np.isfinite(term.data).all():
            raise NonFinite(f"{name} loss is not finite: {term.data}")
    return (T.scale(l_mlm, w.mlm_orig) + T.scale(l_mlm_trans, w.mlm_trans)
            + T.scale(l_tcm, w.tcm))
