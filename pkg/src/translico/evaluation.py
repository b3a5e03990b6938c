"""Cross-script retrieval, script centroids, alignment/uniformity and PCA."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .corpus import SentencePair
from .encoder import Model, forward, mean_pool, pool_mask
from .errors import (DegenerateNorm, EmptyPool, InsufficientData, InsufficientGroups,
                     RankDeficientWarning)
from .romanizer import Romanizer
from .scripts import ScriptTag
from .tokenizer import Role, Vocab, encode

REPORT_SCHEMA = 1


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        bad = np.flatnonzero(norms.reshape(-1) == 0)
        raise DegenerateNorm(f"zero vector at rows {bad[:5].tolist()}")
    return x / norms


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _unit_rows(a) @ _unit_rows(b).T


# ---------------------------------------------------------------- embedding

def embed_sentences(model: Model, vocab: Vocab, sentences: Sequence[str], pool_layer: int | None = None,
                    ids: Sequence[str] | None = None, batch_size: int = 64) -> np.ndarray:
    """One mean-pooled vector per sentence, no masking, in input order."""
    layer = model.config.pool_layer if pool_layer is None else pool_layer
    seqs = [encode(s, vocab, model.config.max_len) for s in sentences]
    for i, seq in enumerate(seqs):
        if not pool_mask(seq.roles).any():
            name = ids[i] if ids is not None else i
            raise EmptyPool(f"sentence {name} has no content tokens")
    d = model.config.d_model
    out = np.zeros((len(seqs), d), dtype=np.float64)
    with T.no_grad():
        for lo in range(0, len(seqs), batch_size):
            part = seqs[lo:lo + batch_size]
            width = max(int(np.count_nonzero(s.roles != Role.PAD)) for s in part)
            tok = np.stack([s.ids[:width] for s in part])
            roles = np.stack([s.roles[:width] for s in part])
            hidden = forward(model, tok, roles)
            out[lo:lo + len(part)] = mean_pool(hidden, roles, layer).data
    return out


# ---------------------------------------------------------------- retrieval

@dataclass
class RetrievalReport:
    accuracy: float  # macro average over groups
    k: int
    n_queries: int
    n_candidates: int
    layer: int | None = None
    per_group: dict[str, float] = field(default_factory=dict)
    group_sizes: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"schema": REPORT_SCHEMA, **asdict(self)}


def rank_candidates(queries: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Candidate indices per query, best first; equal scores keep ascending index."""
    sims = cosine_matrix(queries, candidates)
    return np.argsort(-sims, axis=1, kind="stable")


def topk_hits(queries, candidates, gold, k: int) -> np.ndarray:
    gold = np.asarray(gold, dtype=np.int64)
    queries, candidates = np.asarray(queries), np.asarray(candidates)
    if gold.shape != (len(queries),):
        raise ValueError(f"need one gold index per query, got {gold.shape} for {len(queries)}")
    if not 1 <= k <= len(candidates):
        raise ValueError(f"k={k} outside [1, {len(candidates)}]")
    top = rank_candidates(queries, candidates)[:, :k]
    return np.any(top == gold[:, None], axis=1)


def retrieval_topk(queries, candidates, gold, k: int = 10, groups: Sequence[str] | None = None,
                   layer: int | None = None) -> RetrievalReport:
    """Top-k accuracy of cosine retrieval.

    With ``groups`` each query only competes within its own group: the
    candidate set for group g is the candidates whose index is the gold of
    some query in g. Accuracy is the mean over groups.
    """
    queries, candidates = np.asarray(queries), np.asarray(candidates)
    gold = np.asarray(gold, dtype=np.int64)
    if len(queries) == 0 or len(candidates) == 0:
        raise InsufficientData("retrieval needs at least one query and one candidate")
    if groups is None:
        hits = topk_hits(queries, candidates, gold, k)
        acc = float(hits.mean())
        return RetrievalReport(acc, k, len(queries), len(candidates), layer, {"all": acc},
                               {"all": len(queries)})
    groups = np.asarray(groups)
    per, sizes = {}, {}
    for g in sorted(set(groups.tolist())):
        q = np.flatnonzero(groups == g)
        cand = np.unique(gold[q])
        local = np.searchsorted(cand, gold[q])
        kk = min(k, len(cand))
        per[g] = float(topk_hits(queries[q], candidates[cand], local, kk).mean())
        sizes[g] = int(q.size)
    return RetrievalReport(float(np.mean(list(per.values()))), k, len(queries), len(candidates),
                           layer, per, sizes)


# ---------------------------------------------------------------- geometry

@dataclass
class ScriptCentroidMatrix:
    tags: list[str]
    raw: np.ndarray
    display: np.ndarray
    counts: list[int]

    def cosine(self, a, b) -> float:
        return float(self.raw[self.tags.index(str(a)), self.tags.index(str(b))])

    def rows(self):
        for i, a in enumerate(self.tags):
            for j, b in enumerate(self.tags):
                yield a, b, float(self.raw[i, j]), float(self.display[i, j])


def script_centroids(reps, tags: Sequence, normalize: bool = True) -> ScriptCentroidMatrix:
    """Cosine between per-script centroids, plus a min-max scaled copy of the off-diagonal."""
    reps = np.asarray(reps, dtype=np.float64)
    names = np.asarray([str(t) for t in tags])
    if len(names) != len(reps):
        raise ValueError("one tag per representation required")
    order = sorted(set(names.tolist()))
    if len(order) < 2:
        raise InsufficientGroups(f"need at least 2 script groups, got {order}")
    x = _unit_rows(reps) if normalize else reps
    cents = np.stack([x[names == g].mean(axis=0) for g in order])
    raw = cosine_matrix(cents, cents)
    raw = (raw + raw.T) / 2
    off = ~np.eye(len(order), dtype=bool)
    lo, hi = raw[off].min(), raw[off].max()
    display = np.ones_like(raw)
    if hi > lo:
        display[off] = (raw[off] - lo) / (hi - lo)
    counts = [int(np.sum(names == g)) for g in order]
    return ScriptCentroidMatrix(order, raw, display, counts)


def alignment_uniformity(reps, pair_of) -> tuple[float, float]:
    """(mean squared distance between unit-normalized partners,
    log mean exp(-2 * squared distance) over all i < j)."""
    u = _unit_rows(reps)
    pair_of = np.asarray(pair_of, dtype=np.int64)
    n = len(u)
    idx = np.arange(n)
    if n < 2 or pair_of.shape != (n,) or np.any(pair_of[pair_of] != idx):
        raise ValueError("need >= 2 representations and an involutive pair map")
    align = float(np.mean(np.sum((u - u[pair_of]) ** 2, axis=1)))
    iu = np.triu_indices(n, k=1)
    sq = np.maximum(2.0 - 2.0 * (u @ u.T)[iu], 0.0)
    uniform = float(np.log(np.mean(np.exp(-2.0 * sq))))
    return align, uniform


def pca_project(reps, n_components: int = 2) -> np.ndarray:
    """Project centered rows onto the top principal axes.

    Each axis is signed so its first non-negligible component is positive.
    Missing axes (rank < n_components) come back as zero columns with a warning.
    """
    x = np.asarray(reps, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError(f"pca_project needs >= 3 rows and >= 2 columns, got {x.shape}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (len(x) - 1)
    vals, vecs = np.linalg.eigh(cov)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    tol = max(float(vals[0]), 0.0) * 1e-10 + 1e-300
    usable = int(np.sum(vals[:n_components] > tol))
    out = np.zeros((len(x), n_components))
    for c in range(usable):
        v = vecs[:, c]
        lead = np.flatnonzero(np.abs(v) > 1e-12)
        if lead.size and v[lead[0]] < 0:
            v = -v
        out[:, c] = xc @ v
    if usable < n_components:
        warnings.warn(f"covariance has {usable} positive eigenvalues; zero-filling the rest",
                      RankDeficientWarning, stacklevel=2)
    return out


# ---------------------------------------------------------------- pipelines

@dataclass
class PairEvaluation:
    retrieval: RetrievalReport
    centroids: ScriptCentroidMatrix
    alignment: float
    uniformity: float

    def to_json(self) -> dict:
        return {
            "retrieval": self.retrieval.to_json(),
            "centroids": {"tags": self.centroids.tags, "raw": self.centroids.raw.tolist(),
                          "display": self.centroids.display.tolist(), "counts": self.centroids.counts},
            "alignment": self.alignment,
            "uniformity": self.uniformity,
        }


def retrieval_queries(pairs: Sequence[SentencePair]) -> list[SentencePair]:
    """Non-Latin records; a Latin record would just retrieve itself."""
    queries = [p for p in pairs if p.script is not ScriptTag.LATN]
    if not queries:
        raise InsufficientData("no non-Latin sentences to use as retrieval queries")
    return queries


def evaluate_pairs(model: Model, vocab: Vocab, pairs: Sequence[SentencePair], k: int = 10,
                   pool_layer: int | None = None, romanizer: Romanizer | None = None,
                   transliterate: bool = False, centroid_raw: bool = False) -> PairEvaluation:
    """Retrieve each non-Latin sentence's Latin transliteration among its group's.

    Groups are language-script pairs. Centroids compare each query script
    with the Latin candidates; alignment pairs every query with its gold.
    ``transliterate`` romanizes the queries before encoding.
    """
    rom = romanizer or Romanizer()
    queries = retrieval_queries(pairs)
    q_text = [rom.romanize(p.text) if transliterate else p.text for p in queries]
    c_text = [p.translit if p.translit is not None else rom.romanize(p.text) for p in queries]
    ids = [p.id for p in queries]
    layer = model.config.pool_layer if pool_layer is None else pool_layer
    q = embed_sentences(model, vocab, q_text, layer, ids)
    c = embed_sentences(model, vocab, c_text, layer, ids)
    n = len(queries)
    groups = [f"{p.lang}_{p.script}" for p in queries]
    report = retrieval_topk(q, c, np.arange(n), k, groups, layer)
    tags = [str(p.script) for p in queries] + [str(ScriptTag.LATN)] * n
    both = np.concatenate([q, c])
    cents = script_centroids(both, tags, normalize=not centroid_raw)
    align, uniform = alignment_uniformity(both, np.concatenate([np.arange(n) + n, np.arange(n)]))
    return PairEvaluation(report, cents, align, uniform)


def evaluate_transliterated(model: Model, vocab: Vocab, pairs: Sequence[SentencePair], k: int = 10,
                            pool_layer: int | None = None,
                            romanizer: Romanizer | None = None) -> RetrievalReport:
    """Retrieval with every sentence romanized before encoding."""
    return evaluate_pairs(model, vocab, pairs, k, pool_layer, romanizer, transliterate=True).retrieval


def analyze_scripts(model: Model, vocab: Vocab, pairs: Sequence[SentencePair],
                    pool_layer: int | None = None, normalize: bool = True) -> dict:
    """Embed every record's original text; centroids and PCA grouped by script."""
    layer = model.config.pool_layer if pool_layer is None else pool_layer
    reps = embed_sentences(model, vocab, [p.text for p in pairs], layer, [p.id for p in pairs])
    tags = [str(p.script) for p in pairs]
    return {
        "layer": layer,
        "reps": reps,
        "centroids": script_centroids(reps, tags, normalize) if len(set(tags)) > 1 else None,
        "pca": pca_project(reps) if len(pairs) >= 3 else None,
    }


def centroid_rows(m: ScriptCentroidMatrix) -> list[Mapping]:
    return [{"script_a": a, "script_b": b, "raw_cosine": r, "display": d} for a, b, r, d in m.rows()]
