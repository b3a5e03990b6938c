"""Rule-based romanization into ASCII Latin.

Each input codepoint is assigned a script through the range table. Scripts
with a rule table are rewritten longest-match-first, left to right. Latin
letters lose their diacritics (canonical decomposition, combining marks
dropped). Anything left over goes to the fallback: dropped (default) or
escaped as ``<u+xxxx>``.
"""

from __future__ import annotations

import functools
import logging
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import DuplicateRule, NonAsciiReplacement, ParseError, RuleTableInvalid
from .scripts import DEFAULT_RANGE_TABLE, RangeTable, ScriptTag

log = logging.getLogger(__name__)

FALLBACKS = ("drop", "escape")

# Non-ASCII Common punctuation with an obvious ASCII rendering.
PUNCTUATION = {
    "«": '"', "»": '"', "“": '"', "”": '"', "„": '"',
    "‘": "'", "’": "'", "‚": "'", "′": "'",
    "‐": "-", "‑": "-", "‒": "-", "–": "-", "—": "-", "―": "-",
    "…": "...", "·": ".", "×": "x", "÷": "/",
    "、": ",", "。": ".", "¿": "?", "¡": "!",
}

ESCAPE_WIDTH = len("<u+10ffff>")


def fold_char(ch: str) -> str:
    """The base letter of ``ch`` when it is one letter plus combining marks."""
    if ch.isascii():
        return ch
    base = [c for c in unicodedata.normalize("NFD", ch) if not unicodedata.combining(c)]
    return base[0] if len(base) == 1 else ch


@dataclass(frozen=True)
class RuleTable:
    script: ScriptTag
    rules: tuple[tuple[str, str], ...]
    _lookup: Mapping[str, str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ordered = tuple(sorted(self.rules, key=lambda r: -len(r[0])))
        object.__setattr__(self, "rules", ordered)
        object.__setattr__(self, "_lookup", dict(ordered))
        self.validate()

    def __len__(self):
        return len(self.rules)

    @functools.cached_property
    def max_source_len(self) -> int:
        return max((len(s) for s, _ in self.rules), default=0)

    @property
    def max_replacement_len(self) -> int:
        return max((len(r) for _, r in self.rules), default=0)

    def validate(self) -> None:
        if len(self._lookup) != len(self.rules):
            raise DuplicateRule(f"duplicate source sequence in {self.script} table")
        for src, repl in self.rules:
            if not src:
                raise RuleTableInvalid(f"empty source in {self.script} table")
            if not repl.isascii():
                raise NonAsciiReplacement(f"replacement {repl!r} for {src!r} is not ASCII")
            if src.isascii():
                # ASCII sources would break the ASCII fixed point of romanize
                raise RuleTableInvalid(f"source {src!r} in {self.script} table is pure ASCII")

    def match(self, text: str, start: int, keep_case: bool,
              folded: str | None = None) -> tuple[int, str] | None:
        """Longest rule matching ``text`` at ``start``.

        At each length the exact segment is tried first, then its lowercase
        form, then the same two on ``folded`` (``text`` with diacritics
        stripped per character, so offsets line up).
        """
        for n in range(min(self.max_source_len, len(text) - start), 0, -1):
            views = [text[start:start + n]]
            if folded is not None and folded[start:start + n] != views[0]:
                views.append(folded[start:start + n])
            for seg in views:
                repl = self._lookup.get(seg)
                if repl is not None:
                    return n, repl
                low = seg.lower()
                if low != seg:
                    repl = self._lookup.get(low)
                    if repl is not None:
                        if keep_case:
                            repl = repl.upper() if n > 1 and seg.isupper() else repl.capitalize()
                        return n, repl
        return None


def parse_rule_tables(text: str, source: str = "<string>") -> dict[ScriptTag, RuleTable]:
    pending: dict[ScriptTag, dict[str, str]] = {}
    current: ScriptTag | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        if line.startswith("@script"):
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("expected '@script <TAG>'", source, lineno)
            try:
                current = ScriptTag.parse(parts[1])
            except ValueError as exc:
                raise ParseError(str(exc), source, lineno) from None
            pending.setdefault(current, {})
            continue
        if current is None:
            raise ParseError("rule before any '@script' header", source, lineno)
        if "\t" not in line:
            raise ParseError("expected '<source>\\t<replacement>'", source, lineno)
        src, repl = line.split("\t", 1)
        if not src:
            raise ParseError("empty source sequence", source, lineno)
        if not repl.isascii():
            raise NonAsciiReplacement(f"replacement {repl!r} is not ASCII", source, lineno)
        if src in pending[current]:
            raise DuplicateRule(f"duplicate rule for {src!r} in {current}", source, lineno)
        if src.isascii():
            raise ParseError(f"source {src!r} is pure ASCII", source, lineno)
        pending[current][src] = repl
    return {tag: RuleTable(tag, tuple(rules.items())) for tag, rules in pending.items()}


def load_rule_tables(path: str | Path) -> dict[ScriptTag, RuleTable]:
    """Read and validate a rule file (``@script`` headers, tab-separated rules)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}", str(path)) from None
    return parse_rule_tables(text, str(path))


@functools.lru_cache(maxsize=None)
def default_tables() -> Mapping[ScriptTag, RuleTable]:
    text = resources.files("translico").joinpath("data/rules.tsv").read_text(encoding="utf-8")
    return parse_rule_tables(text, "rules.tsv")


class Romanizer:
    """Immutable romanization engine over a set of rule tables."""

    def __init__(self, tables: Mapping[ScriptTag, RuleTable] | None = None,
                 ranges: RangeTable | None = None, keep_case: bool = False,
                 fallback: str = "drop"):
        if fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}, got {fallback!r}")
        self.tables = dict(default_tables() if tables is None else tables)
        for table in self.tables.values():
            table.validate()
        self.ranges = ranges or DEFAULT_RANGE_TABLE
        self.keep_case = keep_case
        self.fallback = fallback

    @property
    def max_expansion(self) -> int:
        """Upper bound on output characters per input character."""
        k = max([1, *(t.max_replacement_len for t in self.tables.values()),
                 *(len(v) for v in PUNCTUATION.values())])
        if self.fallback == "escape":
            k = max(k, ESCAPE_WIDTH)
        return k

    def __call__(self, text: str) -> str:
        return self.romanize(text)

    def romanize(self, text: str) -> str:
        text = unicodedata.normalize("NFC", text)
        folded = "".join(map(fold_char, text))
        out: list[str] = []
        dropped: list[str] = []
        i = 0
        while i < len(text):
            ch = text[i]
            if ch.isspace() or ch.isascii():
                out.append(ch)
                i += 1
                continue
            table = self.tables.get(self.ranges.lookup(ch))
            hit = table.match(text, i, self.keep_case, folded) if table else None
            if hit:
                out.append(hit[1])
                i += hit[0]
                continue
            out.append(self._single(ch, dropped))
            i += 1
        if dropped:
            log.warning("no romanization for %s", ", ".join(f"U+{ord(c):04X}" for c in dropped))
        result = "".join(out)
        return result if self.keep_case else result.lower()

    def _single(self, ch: str, dropped: list[str], depth: int = 0) -> str:
        if ch.isascii():
            return ch
        if unicodedata.combining(ch) or unicodedata.category(ch) == "Mn":
            return ""
        if depth == 0:
            table = self.tables.get(self.ranges.lookup(ch))
            hit = table.match(ch, 0, self.keep_case) if table else None
            if hit:
                return hit[1]
            base = [c for c in unicodedata.normalize("NFD", ch) if not unicodedata.combining(c)]
            if len(base) == 1 and base[0] != ch:
                table = self.tables.get(self.ranges.lookup(base[0]))
                hit = table.match(base[0], 0, self.keep_case) if table else None
                if hit:
                    return hit[1]
                return self._single(base[0], dropped, depth + 1)
        if ch in PUNCTUATION:
            return PUNCTUATION[ch]
        if self.fallback == "escape":
            return f"<u+{ord(ch):04x}>"
        dropped.append(ch)
        return ""


@functools.lru_cache(maxsize=8)
def _default_romanizer(keep_case: bool, fallback: str) -> Romanizer:
    return Romanizer(keep_case=keep_case, fallback=fallback)


def romanize(text: str, tables: Mapping[ScriptTag, RuleTable] | None = None,
             ranges: RangeTable | None = None, *, keep_case: bool = False,
             fallback: str = "drop") -> str:
    if tables is None and ranges is None:
        return _default_romanizer(keep_case, fallback).romanize(text)
    return Romanizer(tables, ranges, keep_case, fallback).romanize(text)
