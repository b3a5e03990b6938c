"""Toy parallel corpora: random Latin sentences and their cipher-script twins."""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .corpus import SentencePair
from .errors import ConfigError
from .scripts import CIPHER_BASES, ScriptTag, encipher

LANG = "syn"
_LEXICON, _TRAIN, _EVAL = 0, 1, 2


@dataclass(frozen=True)
class SyntheticSpec:
    lexicon_size: int = 200
    count: int = 2000
    min_len: int = 4
    max_len: int = 10
    scripts: tuple[ScriptTag, ...] = (ScriptTag.TOYA, ScriptTag.LATN)
    seed: int = 0
    successors: int = 8  # distinct follow-up words per word; gives the LM something to learn

    def __post_init__(self):
        if self.lexicon_size < 2 or self.count < 1:
            raise ConfigError("lexicon_size >= 2 and count >= 1 required")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(f"bad sentence length range [{self.min_len}, {self.max_len}]")
        if not self.scripts or any(s not in CIPHER_BASES and s is not ScriptTag.LATN for s in self.scripts):
            raise ConfigError(f"scripts must be drawn from ToyA, ToyB, Latn: {self.scripts}")
        if len(set(self.scripts)) != len(self.scripts):
            raise ConfigError("duplicate script in spec")


@dataclass(frozen=True)
class Lexicon:
    words: tuple[str, ...]
    next_words: np.ndarray  # (lexicon, successors) word indices
    next_probs: np.ndarray  # (successors,)


def make_lexicon(spec: SyntheticSpec) -> Lexicon:
    rng = np.random.default_rng([spec.seed, _LEXICON])
    letters = np.array(list(string.ascii_lowercase))
    words: list[str] = []
    seen = set()
    while len(words) < spec.lexicon_size:
        w = "".join(rng.choice(letters, size=int(rng.integers(2, 8))))
        if w not in seen:
            seen.add(w)
            words.append(w)
    k = min(spec.successors, spec.lexicon_size)
    nxt = np.stack([rng.choice(spec.lexicon_size, size=k, replace=False) for _ in words])
    probs = 1.0 / np.arange(1, k + 1)
    return Lexicon(tuple(words), nxt, probs / probs.sum())


def latin_sentences(spec: SyntheticSpec, count: int, stream: int, lexicon: Lexicon | None = None) -> list[str]:
    """Word chains: a uniform first word, then Zipf-weighted successors."""
    lex = lexicon or make_lexicon(spec)
    rng = np.random.default_rng([spec.seed, stream])
    out = []
    for _ in range(count):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        w = int(rng.integers(len(lex.words)))
        sent = [lex.words[w]]
        for _ in range(n - 1):
            w = int(lex.next_words[w, rng.choice(len(lex.next_probs), p=lex.next_probs)])
            sent.append(lex.words[w])
        out.append(" ".join(sent))
    return out


def _records(spec: SyntheticSpec, sentences: list[str], prefix: str) -> list[SentencePair]:
    recs = []
    for i, s in enumerate(sentences):
        for tag in spec.scripts:
            text = s if tag is ScriptTag.LATN else encipher(s, tag)
            recs.append(SentencePair(f"{prefix}-{i:05d}-{tag.value.lower()}", LANG, tag, text))
    return recs


def gen_synthetic(spec: SyntheticSpec, eval_count: int = 0) -> tuple[list[SentencePair], list[SentencePair]]:
    """Training records and held-out records over one shared lexicon.

    Every sentence is emitted once per script in ``spec.scripts``;
    ``translit`` stays empty for build-corpus to fill.
    """
    lex = make_lexicon(spec)
    train = _records(spec, latin_sentences(spec, spec.count, _TRAIN, lex), "train")
    held = _records(spec, latin_sentences(spec, eval_count, _EVAL, lex), "eval") if eval_count else []
    return train, held
