"""Script tags and codepoint range tables used for script detection."""

from __future__ import annotations

import bisect
import enum
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import RuleTableInvalid


class ScriptTag(str, enum.Enum):
    LATN = "Latn"
    CYRL = "Cyrl"
    GREK = "Grek"
    DEVA = "Deva"
    ARAB = "Arab"
    HANI = "Hani"
    TOYA = "ToyA"
    TOYB = "ToyB"
    COMMON = "Zyyy"
    UNKNOWN = "Zzzz"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, name: str) -> "ScriptTag":
        aliases = {"common": cls.COMMON, "unknown": cls.UNKNOWN}
        key = name.strip()
        if key.lower() in aliases:
            return aliases[key.lower()]
        for tag in cls:
            if tag.value.lower() == key.lower():
                return tag
        raise ValueError(f"unknown script tag {name!r}")


@dataclass(frozen=True)
class ScriptRange:
    lo: int
    hi: int
    tag: ScriptTag


# First codepoint of each synthetic cipher alphabet (a..z map to base..base+25).
CIPHER_BASES = {ScriptTag.TOYA: 0xE000, ScriptTag.TOYB: 0xE100}

_C, _L = ScriptTag.COMMON, ScriptTag.LATN

DEFAULT_RANGES: tuple[ScriptRange, ...] = (
    ScriptRange(0x0000, 0x0040, _C),
    ScriptRange(0x0041, 0x005A, _L),
    ScriptRange(0x005B, 0x0060, _C),
    ScriptRange(0x0061, 0x007A, _L),
    ScriptRange(0x007B, 0x00BF, _C),
    ScriptRange(0x00C0, 0x00D6, _L),
    ScriptRange(0x00D7, 0x00D7, _C),
    ScriptRange(0x00D8, 0x00F6, _L),
    ScriptRange(0x00F7, 0x00F7, _C),
    ScriptRange(0x00F8, 0x02AF, _L),
    # modifier letters and combining diacritical marks
    ScriptRange(0x02B0, 0x036F, _C),
    ScriptRange(0x0370, 0x03FF, ScriptTag.GREK),
    ScriptRange(0x0400, 0x052F, ScriptTag.CYRL),
    ScriptRange(0x0600, 0x06FF, ScriptTag.ARAB),
    ScriptRange(0x0900, 0x097F, ScriptTag.DEVA),
    ScriptRange(0x1AB0, 0x1AFF, _C),
    ScriptRange(0x1DC0, 0x1DFF, _C),
    ScriptRange(0x1E00, 0x1EFF, _L),
    ScriptRange(0x1F00, 0x1FFF, ScriptTag.GREK),
    ScriptRange(0x2000, 0x206F, _C),
    ScriptRange(0x20A0, 0x20FF, _C),
    ScriptRange(0x3000, 0x303F, _C),
    ScriptRange(0x3400, 0x4DBF, ScriptTag.HANI),
    ScriptRange(0x4E00, 0x9FFF, ScriptTag.HANI),
    ScriptRange(0xE000, 0xE019, ScriptTag.TOYA),
    ScriptRange(0xE100, 0xE119, ScriptTag.TOYB),
)


class RangeTable:
    """Sorted, disjoint codepoint ranges with O(log n) lookup."""

    def __init__(self, ranges: Iterable[ScriptRange]):
        self.ranges = tuple(ranges)
        validate_ranges(self.ranges)
        self._starts = [r.lo for r in self.ranges]

    def lookup(self, ch: str) -> ScriptTag | None:
        cp = ord(ch)
        i = bisect.bisect_right(self._starts, cp) - 1
        if i >= 0 and cp <= self.ranges[i].hi:
            return self.ranges[i].tag
        return None


def validate_ranges(ranges: Sequence[ScriptRange]) -> None:
    prev_hi = -1
    for r in ranges:
        if r.lo > r.hi:
            raise RuleTableInvalid(f"range {r.lo:04X}-{r.hi:04X} has lo > hi")
        if r.lo <= prev_hi:
            raise RuleTableInvalid(f"range {r.lo:04X}-{r.hi:04X} overlaps or is out of order")
        prev_hi = r.hi


DEFAULT_RANGE_TABLE = RangeTable(DEFAULT_RANGES)


def detect_script(text: str, ranges: RangeTable | None = None) -> ScriptTag:
    """Majority script over non-Common codepoints.

    Ties go to the script encountered first. Text made only of Common
    codepoints (plus unmatched ones) is Common; empty text or text where
    nothing matches is Unknown.
    """
    table = ranges or DEFAULT_RANGE_TABLE
    counts: Counter[ScriptTag] = Counter()
    first_seen: dict[ScriptTag, int] = {}
    saw_common = False
    for i, ch in enumerate(text):
        tag = table.lookup(ch)
        if tag is None:
            continue
        if tag is ScriptTag.COMMON:
            saw_common = True
            continue
        counts[tag] += 1
        first_seen.setdefault(tag, i)
    if counts:
        return max(counts, key=lambda t: (counts[t], -first_seen[t]))
    return ScriptTag.COMMON if saw_common else ScriptTag.UNKNOWN


def cipher_char(letter: str, script: ScriptTag) -> str:
    return chr(CIPHER_BASES[script] + ord(letter) - ord("a"))


def encipher(text: str, script: ScriptTag) -> str:
    """Map lowercase ASCII letters into a cipher script; everything else is kept."""
    return "".join(cipher_char(c, script) if "a" <= c <= "z" else c for c in text)
