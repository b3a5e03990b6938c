"""Training loop, checkpoints, metrics log and the ablation grid."""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .corpus import SentencePair, read_jsonl
from .encoder import MLM_ONLY_PARAMS, Model, ModelConfig, forward, mean_pool, mlm_logits
from .errors import ConfigError, NonFinite, NonFiniteLoss, StreamExhausted, TranslicoError
from .evaluation import evaluate_pairs
from .objectives import (CORRUPTIONS, IGNORE, ContrastiveBatch, LossWeights, MaskedBatch,
                         apply_masking, combined_loss, mlm_loss, paired_index, stack_masked,
                         tcm_loss)
from .romanizer import Romanizer
from .scripts import ScriptTag
from .tokenizer import PAD, Role, TokenSequence, Vocab, encode, train_vocab

log = logging.getLogger(__name__)

PAPER_LR = 1e-5
METRICS_HEADER = ("step", "loss_mlm_orig", "loss_mlm_trans", "loss_tcm", "loss_total")
CHECKPOINT_SCHEMA = 1
# named random sub-streams under the single seed
_INIT, _BATCH = 1, 2


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    tau: float = 1.0
    mask_rate: float = 0.15
    corruption: str = "pure-mask"
    batch_pairs: int = 16
    steps: int = 1000
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-6
    seed: int = 0
    checkpoint_every: int = 2000
    include_latin: bool = True
    tcm_clean_forward: bool = False
    model: dict = field(default_factory=dict)  # ModelConfig fields; vocab_size comes from the vocab
    vocab_size: int = 1000  # target size when the vocabulary is trained on the fly
    early_stopping_patience: int | None = None
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.weights, Mapping):
            self.weights = LossWeights(**self.weights)
        elif isinstance(self.weights, (list, tuple)):
            self.weights = LossWeights(*self.weights)
        if isinstance(self.model, ModelConfig):
            self.model = self.model.to_dict()
        self.model = dict(self.model)
        self.validate()

    def validate(self):
        checks = [
            (self.batch_pairs >= 1, "batch_pairs must be >= 1"),
            (self.steps >= 1, "steps must be >= 1"),
            (self.lr > 0, "lr must be > 0"),
            (self.checkpoint_every >= 1, "checkpoint_every must be >= 1"),
            (self.tau > 0, "tau must be > 0"),
            (0 < self.mask_rate < 1, "mask_rate must be in (0, 1)"),
            (self.corruption in CORRUPTIONS, f"corruption must be one of {CORRUPTIONS}"),
            (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "betas must be in [0, 1)"),
            (self.eps_adam > 0, "eps_adam must be > 0"),
            (self.threads >= 1, "threads must be >= 1"),
            (self.early_stopping_patience is None or self.early_stopping_patience >= 1,
             "early_stopping_patience must be >= 1 or null"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        unknown = set(self.model) - {f.name for f in fields(ModelConfig)}
        if unknown:
            raise ConfigError(f"unknown model fields {sorted(unknown)}")

    def model_config(self, vocab_size: int) -> ModelConfig:
        given = self.model.get("vocab_size")
        if given is not None and given != vocab_size:
            raise ConfigError(f"model.vocab_size {given} != vocabulary size {vocab_size}")
        return ModelConfig(**{**self.model, "vocab_size": vocab_size})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        return cls.from_dict(data)


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss_mlm_orig: float
    loss_mlm_trans: float
    loss_tcm: float
    loss_total: float

    def row(self) -> list[str]:
        return [str(self.step)] + [repr(float(x)) for x in (self.loss_mlm_orig, self.loss_mlm_trans,
                                                             self.loss_tcm, self.loss_total)]


@dataclass
class TrainReport:
    records: list[StepRecord]
    wall_clock: float
    checkpoint: Path | None
    stopped_early: bool = False


# ---------------------------------------------------------------- data

@dataclass(frozen=True)
class EncodedPair:
    id: str
    orig: TokenSequence  # unpadded
    trans: TokenSequence


def _trim(seq: TokenSequence) -> TokenSequence:
    n = int(np.count_nonzero(seq.roles != Role.PAD))
    return TokenSequence(seq.ids[:n], seq.roles[:n])


def _pad(seq: TokenSequence, width: int) -> TokenSequence:
    extra = width - len(seq)
    return TokenSequence(np.concatenate([seq.ids, np.full(extra, PAD, dtype=seq.ids.dtype)]),
                         np.concatenate([seq.roles, np.full(extra, Role.PAD, dtype=seq.roles.dtype)]))


class PairDataset:
    """Encoded (original, transliteration) pairs, cached once."""

    def __init__(self, pairs: Sequence[SentencePair], vocab: Vocab, max_len: int,
                 include_latin: bool = True, romanizer: Romanizer | None = None):
        rom = romanizer
        self.items: list[EncodedPair] = []
        skipped = 0
        for p in pairs:
            if not include_latin and p.script is ScriptTag.LATN:
                continue
            translit = p.translit
            if translit is None:
                rom = rom or Romanizer()
                translit = rom.romanize(p.text)
            a = _trim(encode(p.text, vocab, max_len))
            b = _trim(encode(translit, vocab, max_len))
            if len(a.content_positions) == 0 or len(b.content_positions) == 0:
                skipped += 1
                continue
            self.items.append(EncodedPair(p.id, a, b))
        if skipped:
            log.warning("skipped %d pairs with an empty side after tokenization", skipped)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i) -> EncodedPair:
        return self.items[i]


def batch_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, _BATCH, step])


def make_batch(dataset: PairDataset, config: TrainConfig, rng: np.random.Generator,
               vocab_size: int | None = None) -> tuple[MaskedBatch, MaskedBatch, np.ndarray]:
    """Sample N distinct pairs and mask both sides independently.

    Rows of the returned batches share one width. The pair map indexes the
    concatenation [orig rows, trans rows].
    """
    n = config.batch_pairs
    if len(dataset) < n:
        raise StreamExhausted(f"need {n} pairs per batch, corpus has {len(dataset)}")
    picked = [dataset[int(i)] for i in rng.choice(len(dataset), size=n, replace=False)]
    width = max(max(len(p.orig), len(p.trans)) for p in picked)

    def side(seqs):
        return stack_masked([apply_masking(_pad(s, width), config.mask_rate, rng, config.corruption,
                                           vocab_size) for s in seqs])

    orig = side([p.orig for p in picked])
    trans = side([p.trans for p in picked])
    return orig, trans, paired_index(n)


@dataclass
class BatchLosses:
    mlm_orig: T.Tensor
    mlm_trans: T.Tensor
    tcm: T.Tensor
    total: T.Tensor

    def record(self, step: int) -> StepRecord:
        return StepRecord(step, self.mlm_orig.item(), self.mlm_trans.item(), self.tcm.item(),
                          self.total.item())


def _unmasked(batch: MaskedBatch) -> tuple[np.ndarray, np.ndarray]:
    hit = batch.labels != IGNORE
    ids = np.where(hit, batch.labels, batch.ids)
    roles = np.where(hit, Role.CONTENT, batch.roles)
    return ids, roles


def batch_loss(model: Model, orig: MaskedBatch, trans: MaskedBatch, pair_of: np.ndarray,
               config: TrainConfig) -> BatchLosses:
    """One forward over all 2N rows; MLM on each stream, TCM on pooled vectors."""
    ids = np.concatenate([orig.ids, trans.ids])
    roles = np.concatenate([orig.roles, trans.roles])
    out = forward(model, ids, roles)
    split = orig.ids.size
    rows = np.flatnonzero(np.concatenate([orig.labels, trans.labels]).reshape(-1) != IGNORE)
    l_orig = mlm_loss(orig.labels, mlm_logits(out, model, rows[rows < split]))
    l_trans = mlm_loss(trans.labels, mlm_logits(out, model, rows[rows >= split]))
    layer = model.config.pool_layer
    if config.tcm_clean_forward:
        co, ro = _unmasked(orig)
        ct, rt = _unmasked(trans)
        clean_roles = np.concatenate([ro, rt])
        reps = mean_pool(forward(model, np.concatenate([co, ct]), clean_roles), clean_roles, layer)
    else:
        reps = mean_pool(out, roles, layer)
    l_tcm = tcm_loss(ContrastiveBatch(reps, pair_of, config.tau))
    total = combined_loss(l_orig, l_trans, l_tcm, config.weights)
    return BatchLosses(l_orig, l_trans, l_tcm, total)


# ---------------------------------------------------------------- trainer

class Trainer:
    def __init__(self, config: TrainConfig, dataset: PairDataset, model: Model,
                 adam: T.AdamState | None = None, step: int = 0):
        self.config = config
        self.dataset = dataset
        self.model = model
        self.adam = adam or T.AdamState()
        self.step = step

    @classmethod
    def create(cls, config: TrainConfig, dataset: PairDataset, vocab: Vocab) -> "Trainer":
        mc = config.model_config(len(vocab))
        model = Model.init(mc, np.random.default_rng([config.seed, _INIT]))
        return cls(config, dataset, model)

    def train_step(self) -> StepRecord:
        step = self.step + 1
        rng = batch_rng(self.config.seed, step)
        orig, trans, pair_of = make_batch(self.dataset, self.config, rng, self.model.config.vocab_size)
        try:
            losses = batch_loss(self.model, orig, trans, pair_of, self.config)
        except NonFinite as e:
            raise NonFiniteLoss(f"step {step}: {e}") from e
        self.model.zero_grad()
        losses.total.backward()
        params = self.model.params
        T.adam_step(params, {k: p.grad for k, p in params.items()}, self.adam, self.config.lr,
                    self.config.beta1, self.config.beta2, self.config.eps_adam)
        self.step = step
        return losses.record(step)

    def save(self, path: str | Path) -> None:
        extra = {f"adam.m.{k}": v for k, v in self.adam.m.items()}
        extra.update({f"adam.v.{k}": v for k, v in self.adam.v.items()})
        meta = {"schema": CHECKPOINT_SCHEMA, "step": self.step, "adam_t": self.adam.t,
                "train_config": self.config.to_dict()}
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.model.save(path, extra, meta)

    @classmethod
    def resume(cls, path: str | Path, config: TrainConfig, dataset: PairDataset) -> "Trainer":
        model, extra, meta = Model.load(path)
        adam = T.AdamState()
        adam.t = int(meta.get("adam_t", 0))
        for key, arr in extra.items():
            kind, _, name = key.partition(".")[2].partition(".")
            if key.startswith("adam.") and name in model.params:
                (adam.m if kind == "m" else adam.v)[name] = arr
        return cls(config, dataset, model, adam, int(meta.get("step", 0)))


def _rewrite_metrics(path: Path, keep_through: int) -> None:
    """Drop rows logged after the checkpoint we resume from."""
    if not path.exists():
        return
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    kept = [r for r in rows[1:] if int(r[0]) <= keep_through]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        w.writerows(kept)


def load_pairs(corpus: str | Path | Sequence[SentencePair]) -> list[SentencePair]:
    return read_jsonl(corpus) if isinstance(corpus, (str, Path)) else list(corpus)


def vocab_texts(pairs: Sequence[SentencePair], romanizer: Romanizer | None = None) -> list[str]:
    rom = romanizer or Romanizer()
    out = []
    for p in pairs:
        out.append(p.text)
        out.append(p.translit if p.translit is not None else rom.romanize(p.text))
    return out


def train(config: TrainConfig, corpus, out_dir: str | Path, vocab: Vocab | None = None,
          resume: str | Path | None = None) -> TrainReport:
    """Run ``config.steps`` updates, logging every step and checkpointing periodically.

    Outputs under ``out_dir``: ``metrics.csv``, ``vocab.json``,
    ``checkpoints/step-XXXXXX.bin`` and the final ``model.bin``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = load_pairs(corpus)
    if vocab is None:
        vocab = train_vocab(vocab_texts(pairs), config.vocab_size, seed=config.seed)
    vocab.save(out / "vocab.json")
    max_len = config.model_config(len(vocab)).max_len
    dataset = PairDataset(pairs, vocab, max_len, config.include_latin)
    metrics = out / "metrics.csv"
    if resume is not None:
        trainer = Trainer.resume(resume, config, dataset)
        if trainer.model.config.vocab_size != len(vocab):
            raise ConfigError("checkpoint vocabulary size does not match the vocabulary")
        _rewrite_metrics(metrics, trainer.step)
    else:
        trainer = Trainer.create(config, dataset, vocab)
        metrics.write_text(",".join(METRICS_HEADER) + "\n", encoding="utf-8")
    records: list[StepRecord] = []
    best, since_best, stopped = math.inf, 0, False
    last_ckpt: Path | None = Path(resume) if resume is not None else None
    start = time.perf_counter()
    with threadpool_limits(limits=config.threads), open(metrics, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        while trainer.step < config.steps:
            rec = trainer.train_step()
            records.append(rec)
            writer.writerow(rec.row())
            fh.flush()
            if trainer.step % config.checkpoint_every == 0:
                last_ckpt = out / "checkpoints" / f"step-{trainer.step:06d}.bin"
                trainer.save(last_ckpt)
            if config.early_stopping_patience is not None:
                if rec.loss_total < best:
                    best, since_best = rec.loss_total, 0
                else:
                    since_best += 1
                    if since_best >= config.early_stopping_patience:
                        stopped = True
                        log.info("loss plateaued for %d steps; stopping at step %d", since_best, trainer.step)
                        break
    final = out / "model.bin"
    trainer.save(final)
    elapsed = time.perf_counter() - start
    print(f"trained {len(records)} steps in {elapsed:.1f}s", file=sys.stderr)
    return TrainReport(records, elapsed, final, stopped)


# ---------------------------------------------------------------- ablation grid

VARIANTS = {
    "full": (1.0, 1.0, 1.0),
    "w/o TCM": (1.0, 1.0, 0.0),
    "w/o MLM": (0.0, 0.0, 1.0),
}
LATIN_GROUPS = {"+Latn": True, "-Latn": False}


def mlm_param_delta(before: Mapping[str, np.ndarray], after: Model) -> float:
    """Largest absolute change over the parameters only the MLM loss can reach."""
    return max(float(np.max(np.abs(after.params[k].data - before[k]))) for k in MLM_ONLY_PARAMS)


def run_ablation_grid(base: TrainConfig, corpus, out_dir: str | Path, eval_pairs=None,
                      vocab: Vocab | None = None, k: int = 10) -> dict:
    """Train and evaluate every {full, w/o TCM, w/o MLM} x {+Latn, -Latn} cell.

    A failing cell is reported with its error and the remaining cells still run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = load_pairs(corpus)
    evaluation = load_pairs(eval_pairs) if eval_pairs is not None else pairs
    if vocab is None:
        vocab = train_vocab(vocab_texts(pairs), base.vocab_size, seed=base.seed)
    vocab.save(out / "vocab.json")
    init = Model.init(base.model_config(len(vocab)), np.random.default_rng([base.seed, _INIT]))
    initial = {k_: init.params[k_].data.copy() for k_ in MLM_ONLY_PARAMS}
    cells = []
    for variant, w in VARIANTS.items():
        for group, latin in LATIN_GROUPS.items():
            label = f"{variant} {group}"
            cell: dict = {"label": label, "variant": variant, "latin": group, "weights": list(w)}
            cfg = replace(base, weights=LossWeights(*w), include_latin=latin)
            slug = label.replace("/", "").replace(" ", "_").replace("+", "plus").replace("-", "minus")
            try:
                report = train(cfg, pairs, out / slug, vocab)
                model, _, _ = Model.load(report.checkpoint)
                ev = evaluate_pairs(model, vocab, evaluation, k)
                cell.update({
                    "retrieval_accuracy": ev.retrieval.accuracy,
                    "retrieval": ev.retrieval.to_json(),
                    "centroid_cosine": _cross_centroid(ev),
                    "centroids": ev.to_json()["centroids"],
                    "alignment": ev.alignment,
                    "uniformity": ev.uniformity,
                    "mlm_param_delta": mlm_param_delta(initial, model),
                    "final_losses": asdict(report.records[-1]),
                    "error": None,
                })
            except (TranslicoError, OSError, ValueError) as e:
                log.error("cell %s failed: %s", label, e)
                cell["error"] = f"{type(e).__name__}: {e}"
            cells.append(cell)
    report = {"schema": CHECKPOINT_SCHEMA, "k": k, "cells": cells}
    (out / "ablation.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


def _cross_centroid(ev) -> float:
    """Mean raw cosine between the Latin centroid and every other script's."""
    c = ev.centroids
    latn = str(ScriptTag.LATN)
    others = [t for t in c.tags if t != latn]
    return float(np.mean([c.cosine(t, latn) for t in others]))
