"""Corpus records: sampling per language-script, pairing with romanizations, JSONL I/O."""

from __future__ import annotations

import json
import math
import zlib
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence, TypeVar

import numpy as np

from .errors import EmptyCorpus, ParseError
from .romanizer import Romanizer
from .scripts import ScriptTag, detect_script

T = TypeVar("T")

REQUIRED_FIELDS = ("id", "lang", "script", "text", "translit")


@dataclass(frozen=True)
class SentencePair:
    id: str
    lang: str
    script: ScriptTag
    text: str
    translit: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"record {self.id!r} has empty text")
        if not isinstance(self.script, ScriptTag):
            object.__setattr__(self, "script", ScriptTag.parse(str(self.script)))

    def to_json(self) -> dict:
        d = asdict(self)
        d["script"] = self.script.value
        return d


def read_jsonl(path: str | Path) -> list[SentencePair]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                missing = [k for k in ("id", "text") if k not in obj]
                if missing:
                    raise ValueError(f"missing fields {missing}")
                script = obj.get("script")
                records.append(SentencePair(
                    id=str(obj["id"]),
                    lang=obj.get("lang") or "und",
                    script=ScriptTag.parse(script) if script else detect_script(obj["text"]),
                    text=obj["text"],
                    translit=obj.get("translit"),
                ))
            except (ValueError, TypeError) as exc:
                raise ParseError(str(exc), str(path), lineno) from None
    return records


def write_jsonl(path: str | Path, records: Iterable[SentencePair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=False) + "\n")


def _group_seed(seed: int, key: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(key.encode("utf-8"))])


def sample_fraction(sentences: Sequence[T], fraction: float, seed: int, key: str = "") -> list[T]:
    """Draw ``ceil(fraction * n)`` items without replacement, kept in input order.

    The draw is the prefix of one seeded permutation, so smaller fractions
    select subsets of larger ones. ``key`` (a language-script label) gives
    every group its own stream.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(sentences)
    if n == 0:
        raise EmptyCorpus(f"no sentences for {key or 'corpus'}")
    k = math.ceil(round(fraction * n, 9))
    order = _group_seed(seed, key).permutation(n)
    return [sentences[i] for i in sorted(order[:k])]


def sample_corpus(records: Sequence[SentencePair], fraction: float, seed: int) -> list[SentencePair]:
    """Sample every (lang, script) stream independently."""
    if not records:
        raise EmptyCorpus("empty corpus")
    groups: dict[str, list[SentencePair]] = defaultdict(list)
    for rec in records:
        groups[f"{rec.lang}_{rec.script.value}"].append(rec)
    out = []
    for key in sorted(groups):
        out.extend(sample_fraction(groups[key], fraction, seed, key))
    return out


def build_pairs(records: Iterable[SentencePair], romanizer: Romanizer | None = None,
                include_latin: bool = True, detect: bool = True) -> list[SentencePair]:
    """Fill ``translit`` with the romanization of ``text``.

    With ``detect`` the script field is replaced by the detected script.
    ``include_latin=False`` drops Latin-script sentences.
    """
    rom = romanizer or Romanizer()
    out = []
    for rec in records:
        script = detect_script(rec.text, rom.ranges) if detect else rec.script
        if not include_latin and script is ScriptTag.LATN:
            continue
        out.append(SentencePair(rec.id, rec.lang, script, rec.text, rom.romanize(rec.text)))
    return out


def check_pairs(pairs: Iterable[SentencePair], romanizer: Romanizer | None = None) -> None:
    rom = romanizer or Romanizer()
    for p in pairs:
        if p.translit != rom.romanize(p.text):
            raise ValueError(f"pair {p.id!r}: translit does not match romanize(text)")
