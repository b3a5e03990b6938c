"""Shared subword vocabulary for original and romanized text.

Training is character-level BPE over whitespace chunks (a chunk keeps its
leading ``▁`` space marker). Every vocabulary also carries 256 byte tokens,
so characters never seen in training still encode.
"""

from __future__ import annotations

import enum
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientData

SPACE = "▁"
PAD, UNK, CLS, SEP, MASK = range(5)
SPECIALS = ("[pad]", "[unk]", "[cls]", "[sep]", "[mask]")
N_SPECIAL = len(SPECIALS)
BYTE_OFFSET = N_SPECIAL
N_BYTES = 256
VOCAB_SCHEMA = 1

_CHUNK = re.compile(f"{SPACE}[^{SPACE}]*|[^{SPACE}]+")


class Role(enum.IntEnum):
    PAD = 0
    CLS = 1
    SEP = 2
    CONTENT = 3
    MASK = 4


@dataclass
class TokenSequence:
    ids: np.ndarray
    roles: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.roles = np.asarray(self.roles, dtype=np.int8)
        if self.ids.shape != self.roles.shape:
            raise ValueError("ids and roles differ in length")

    def __len__(self):
        return len(self.ids)

    @property
    def content_positions(self) -> np.ndarray:
        return np.flatnonzero(self.roles == Role.CONTENT)


def chunks(text: str) -> list[str]:
    if not text:
        return []
    return _CHUNK.findall(SPACE + text.replace(" ", SPACE))


class Vocab:
    def __init__(self, tokens: Sequence[str], merges: Sequence[tuple[str, str]] = ()):
        tokens = list(tokens)
        if tuple(tokens[:N_SPECIAL]) != SPECIALS:
            raise ValueError("the first five tokens must be the specials")
        self.tokens = tokens
        self.merges = [tuple(m) for m in merges]
        # byte tokens are addressed by id only, never by string match
        self._index = {t: i for i, t in enumerate(tokens) if i >= BYTE_OFFSET + N_BYTES}
        if len(self._index) != len(tokens) - BYTE_OFFSET - N_BYTES:
            raise ValueError("duplicate token strings")
        self._max_len = max((len(t) for t in self._index), default=1)

    def __len__(self):
        return len(self.tokens)

    @property
    def specials(self) -> dict[str, int]:
        return {name.strip("[]"): i for i, name in enumerate(SPECIALS)}

    def token_id(self, token: str) -> int | None:
        return self._index.get(token)

    def encode_chunk(self, chunk: str) -> list[int]:
        out = []
        i = 0
        while i < len(chunk):
            for n in range(min(self._max_len, len(chunk) - i), 0, -1):
                tid = self._index.get(chunk[i:i + n])
                if tid is not None:
                    out.append(tid)
                    i += n
                    break
            else:
                out.extend(BYTE_OFFSET + b for b in chunk[i].encode("utf-8"))
                i += 1
        return out

    def encode(self, text: str, max_len: int = 64) -> TokenSequence:
        return encode(text, self, max_len)

    def decode(self, ids: Iterable[int]) -> str:
        return decode(ids, self)

    def to_json(self) -> dict:
        return {"schema": VOCAB_SCHEMA, "specials": self.specials,
                "tokens": self.tokens, "merges": [list(m) for m in self.merges]}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False, indent=1) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(obj["tokens"], obj.get("merges", ()))


def _byte_tokens() -> list[str]:
    return [f"<0x{b:02X}>" for b in range(N_BYTES)]


def train_vocab(texts: Iterable[str], target_size: int, seed: int = 0) -> Vocab:
    """Learn BPE merges until the vocabulary holds ``target_size`` tokens.

    The most frequent adjacent pair is merged first; equal counts go to the
    lexicographically smallest pair, so the result does not depend on
    ``seed`` (kept for a uniform pipeline signature).
    """
    del seed
    words = Counter()
    for text in texts:
        words.update(chunks(text))
    alphabet = sorted({ch for w in words for ch in w})
    base = N_SPECIAL + N_BYTES + len(alphabet)
    if target_size < base:
        raise InsufficientData(
            f"target size {target_size} is below the base vocabulary "
            f"({N_SPECIAL} specials + {N_BYTES} bytes + {len(alphabet)} characters)")

    tokens = list(SPECIALS) + _byte_tokens() + alphabet
    known = set(alphabet)
    merges: list[tuple[str, str]] = []
    seqs = {w: list(w) for w in words}
    while len(tokens) < target_size:
        pairs: Counter = Counter()
        for w, syms in seqs.items():
            c = words[w]
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += c
        if not pairs:
            break
        best = min(pairs, key=lambda p: (-pairs[p], p))
        merged = best[0] + best[1]
        merges.append(best)
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
        for w, syms in seqs.items():
            if len(syms) < 2:
                continue
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == best[0] and syms[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            seqs[w] = out
    return Vocab(tokens, merges)


def encode(text: str, vocab: Vocab, max_len: int = 64) -> TokenSequence:
    """[cls] content [sep], truncated to ``max_len`` and padded with [pad]."""
    if max_len < 2:
        raise ValueError("max_len must leave room for [cls] and [sep]")
    content = [tid for ch in chunks(text) for tid in vocab.encode_chunk(ch)][: max_len - 2]
    ids = [CLS] + content + [SEP]
    roles = [Role.CLS] + [Role.CONTENT] * len(content) + [Role.SEP]
    pad = max_len - len(ids)
    return TokenSequence(ids + [PAD] * pad, roles + [Role.PAD] * pad)


def decode(ids: Iterable[int], vocab: Vocab) -> str:
    parts: list[str] = []
    buf = bytearray()
    for tid in ids:
        tid = int(tid)
        if BYTE_OFFSET <= tid < BYTE_OFFSET + N_BYTES:
            buf.append(tid - BYTE_OFFSET)
            continue
        if buf:
            parts.append(buf.decode("utf-8", errors="replace"))
            buf.clear()
        if tid in (PAD, CLS, SEP):
            continue
        parts.append(vocab.tokens[tid] if tid >= N_SPECIAL else SPECIALS[tid])
    if buf:
        parts.append(buf.decode("utf-8", errors="replace"))
    text = "".join(parts).replace(SPACE, " ")
    return text[1:] if text.startswith(" ") else text


def stack(seqs: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Batch arrays (B, T) trimmed to the longest non-pad sequence."""
    width = max(int(np.count_nonzero(s.roles != Role.PAD)) for s in seqs)
    ids = np.stack([s.ids[:width] for s in seqs])
    roles = np.stack([s.roles[:width] for s in seqs])
    return ids, roles
