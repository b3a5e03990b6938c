import threading
import unicodedata

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from translico.errors import DuplicateRule, NonAsciiReplacement, ParseError, RuleTableInvalid
from translico.romanizer import (PUNCTUATION, Romanizer, RuleTable, default_tables,
                                 load_rule_tables, parse_rule_tables, romanize)
from translico.scripts import (DEFAULT_RANGES, RangeTable, ScriptRange, ScriptTag,
                               detect_script, encipher, validate_ranges)

ROM = Romanizer()


def ascii_closed(s: str) -> bool:
    return all(ord(c) <= 0x7F or c.isspace() for c in s)


# ---------------------------------------------------------------- detection

@pytest.mark.parametrize("text, tag", [
    ("abc", ScriptTag.LATN),
    ("", ScriptTag.UNKNOWN),
    ("привет!", ScriptTag.CYRL),
    ("123 ,.!", ScriptTag.COMMON),
    ("\U0010FFFD", ScriptTag.UNKNOWN),
    ("Ελληνικά", ScriptTag.GREK),
    ("नमस्ते", ScriptTag.DEVA),
    ("你好", ScriptTag.HANI),
    ("ab мир", ScriptTag.CYRL),
    ("ab мн", ScriptTag.LATN),  # tie goes to the first script seen
    (encipher("hello", ScriptTag.TOYA), ScriptTag.TOYA),
])
def test_detect_script(text, tag):
    assert detect_script(text) is tag


def test_default_ranges_sorted_and_disjoint():
    validate_ranges(DEFAULT_RANGES)
    with pytest.raises(RuleTableInvalid):
        RangeTable([ScriptRange(10, 20, ScriptTag.LATN), ScriptRange(15, 30, ScriptTag.CYRL)])
    with pytest.raises(RuleTableInvalid):
        RangeTable([ScriptRange(10, 5, ScriptTag.LATN)])


# ---------------------------------------------------------------- romanize examples

@pytest.mark.parametrize("src, out", [
    ("salón", "salon"),
    ("hello world", "hello world"),
    ("мир", "mir"),
    ("Москва", "moskva"),
    ("щи", "shchi"),
    ("ΑΘΗΝΑ", "athina"),
    ("ούζο", "ouzo"),
    ("Straße", "strasse"),
    ("crème brûlée", "creme brulee"),
    ("«да»", '"da"'),
    ("tab\there", "tab\there"),
])
def test_romanize_examples(src, out):
    assert romanize(src) == out


def test_salon_matches_french_after_diacritic_removal():
    assert romanize("salón") == romanize("salon")


def test_decomposed_input_is_handled_like_precomposed():
    assert romanize("salón") == "salon"


def test_keep_case():
    rom = Romanizer(keep_case=True)
    assert rom.romanize("Щука Éclair") == "Shchuka Eclair"
    assert rom.romanize("МИР") == "MIR"


def test_fallback_modes():
    assert romanize("a你b") == "ab"
    assert romanize("a你b", fallback="escape") == "a<u+4f60>b"
    with pytest.raises(ValueError):
        Romanizer(fallback="hex")


def test_unmatched_codepoints_are_logged(caplog):
    romanize("x你")
    assert "U+4F60" in caplog.text


def test_nonascii_whitespace_is_preserved():
    assert romanize("a　b c") == "a　b c"


def test_cipher_tables_invert_encipher():
    for tag in (ScriptTag.TOYA, ScriptTag.TOYB):
        assert romanize(encipher("the quick brown fox", tag)) == "the quick brown fox"


# ---------------------------------------------------------------- table characteristics

def test_shipped_tables_are_ascii_and_toneless():
    tables = default_tables()
    assert ScriptTag.HANI not in tables
    for table in tables.values():
        for src, repl in table.rules:
            assert repl.isascii()
            # tone marks would surface as digits or combining marks
            assert not any(c.isdigit() for c in repl)


def test_no_shipped_table_emits_combining_marks():
    for table in default_tables().values():
        for _, repl in table.rules:
            assert not any(unicodedata.combining(c) for c in repl)


def test_hani_tones_not_emitted_even_with_user_table():
    tables = dict(default_tables())
    tables.update(parse_rule_tables("@script Hani\n害\thai\n氦\thai\n"))
    rom = Romanizer(tables)
    assert rom.romanize("害氦") == "haihai"  # homophones collapse, no tone


def test_latin_diacritics_removed():
    for ch in "áàâäãåāăąçćčďéèêëēėęěíìîïīįñńňóòôöõőōřśšşťúùûüůűūýÿžźż":
        assert romanize(ch).isascii() and len(romanize(ch)) == 1


# ---------------------------------------------------------------- rule files

def write(tmp_path, text):
    p = tmp_path / "rules.tsv"
    p.write_text(text, encoding="utf-8")
    return p


def test_load_three_rules(tmp_path):
    tables = load_rule_tables(write(tmp_path, "# c\n@script Cyrl\nа\ta\nб\tb\nщ\tshch\n"))
    assert len(tables[ScriptTag.CYRL]) == 3


def test_non_ascii_replacement_rejected(tmp_path):
    with pytest.raises(NonAsciiReplacement) as exc:
        load_rule_tables(write(tmp_path, "@script Cyrl\nе\té\n"))
    assert exc.value.line == 2


def test_duplicate_rule_rejected(tmp_path):
    with pytest.raises(DuplicateRule):
        load_rule_tables(write(tmp_path, "@script Cyrl\nщ\tshch\nщ\tsc\n"))


def test_parse_errors_carry_line_numbers(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_rule_tables(write(tmp_path, "а\ta\n"))
    assert exc.value.line == 1
    with pytest.raises(ParseError) as exc:
        load_rule_tables(write(tmp_path, "@script Cyrl\n\nа a\n"))
    assert exc.value.line == 3
    with pytest.raises(ParseError):
        load_rule_tables(write(tmp_path, "@script Klingon\n"))
    with pytest.raises(ParseError):
        load_rule_tables(write(tmp_path, "@script Latn\nab\tx\n"))


def test_rule_table_validation():
    with pytest.raises(DuplicateRule):
        RuleTable(ScriptTag.CYRL, (("а", "a"), ("а", "b")))
    with pytest.raises(NonAsciiReplacement):
        RuleTable(ScriptTag.CYRL, (("а", "á"),))


def test_longest_match_first_regardless_of_file_order():
    tables = parse_rule_tables("@script Grek\nο\to\nυ\tu\nου\tOU\n")
    assert Romanizer(tables).romanize("ου") == "ou"
    assert Romanizer(tables, keep_case=True).romanize("ου") == "OU"


# ---------------------------------------------------------------- properties

@settings(max_examples=1000, deadline=None)
@given(st.text(alphabet=st.characters(max_codepoint=0x7F)))
def test_ascii_idempotence(s):
    once = romanize(s)
    assert once == s.lower()
    assert romanize(once) == once


MIXED = st.text(alphabet=st.one_of(
    st.characters(max_codepoint=0x7F),
    st.sampled_from("áéíóúñçøßæœÀÉ́̈"),
    st.characters(min_codepoint=0x370, max_codepoint=0x52F),
    st.characters(min_codepoint=0xE000, max_codepoint=0xE01F),
    st.sampled_from(list(PUNCTUATION) + ["　", "你", "न"]),
    st.characters(),
))


@settings(max_examples=500, deadline=None)
@given(MIXED, st.booleans(), st.sampled_from(["drop", "escape"]))
def test_output_properties(s, keep_case, fallback):
    rom = Romanizer(keep_case=keep_case, fallback=fallback)
    out = rom.romanize(s)
    assert ascii_closed(out)
    assert rom.romanize(out) == out
    assert rom.romanize(s) == out
    assert len(out) <= rom.max_expansion * len(s)
    assert detect_script(out) in {ScriptTag.LATN, ScriptTag.COMMON, ScriptTag.UNKNOWN}


def test_concurrent_use_is_consistent():
    texts = ["Москва", "salón", "ΑΘΗΝΑ", encipher("abc", ScriptTag.TOYB)] * 50
    expected = [ROM.romanize(t) for t in texts]
    results = [None] * 4

    def work(k):
        results[k] = [ROM.romanize(t) for t in texts]

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r == expected for r in results)
