import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from translico.corpus import (SentencePair, build_pairs, check_pairs, read_jsonl,
                              sample_corpus, sample_fraction, write_jsonl)
from translico.errors import EmptyCorpus, ParseError
from translico.scripts import ScriptTag, encipher


def rec(i, text, lang="xxx", script=None):
    from translico.scripts import detect_script
    return SentencePair(str(i), lang, script or detect_script(text), text)


def test_sample_five_percent():
    assert len(sample_fraction(list(range(100)), 0.05, seed=1)) == 5


def test_sample_rounds_up():
    assert len(sample_fraction(list(range(10)), 0.05, seed=1)) == 1
    assert len(sample_fraction(list(range(100)), 0.07, seed=1)) == 7


def test_full_fraction_keeps_everything():
    items = [f"s{i}" for i in range(37)]
    assert sorted(sample_fraction(items, 1.0, seed=3)) == sorted(items)


def test_sampling_is_deterministic():
    items = list(range(500))
    assert sample_fraction(items, 0.1, 9) == sample_fraction(items, 0.1, 9)
    assert sample_fraction(items, 0.1, 9) != sample_fraction(items, 0.1, 10)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.integers(0, 2**31))
def test_smaller_fraction_is_subset(n, f1, f2, seed):
    lo, hi = sorted((f1, f2))
    items = list(range(n))
    assert set(sample_fraction(items, lo, seed)) <= set(sample_fraction(items, hi, seed))


def test_sampling_errors():
    with pytest.raises(EmptyCorpus):
        sample_fraction([], 0.5, 0)
    with pytest.raises(ValueError):
        sample_fraction([1], 0.0, 0)
    with pytest.raises(ValueError):
        sample_fraction([1], 1.5, 0)


def test_language_scripts_sample_independently():
    eng = [rec(f"e{i}", f"word{i}", "eng") for i in range(50)]
    rus = [rec(f"r{i}", f"слово{i}", "rus") for i in range(50)]
    rus_changed = rus[:40]
    a = [r.id for r in sample_corpus(eng + rus, 0.2, 5) if r.lang == "eng"]
    b = [r.id for r in sample_corpus(eng + rus_changed, 0.2, 5) if r.lang == "eng"]
    assert a == b and len(a) == 10


def test_build_pairs_latin_diacritics():
    pairs = build_pairs([rec(1, "salón rojo")])
    assert pairs[0].translit == "salon rojo"
    assert pairs[0].script is ScriptTag.LATN


def test_build_pairs_excludes_latin_when_asked():
    recs = [rec(1, "salón rojo"), rec(2, "мир")]
    pairs = build_pairs(recs, include_latin=False)
    assert [p.id for p in pairs] == ["2"]
    assert pairs[0].translit == "mir"


def test_build_pairs_cipher_recovers_source():
    src = "kato miru sola"
    pairs = build_pairs([rec(1, encipher(src, ScriptTag.TOYA))])
    assert pairs[0].script is ScriptTag.TOYA and pairs[0].translit == src


def test_build_pairs_uses_detected_script():
    pairs = build_pairs([SentencePair("1", "rus", ScriptTag.LATN, "мир")])
    assert pairs[0].script is ScriptTag.CYRL
    kept = build_pairs([SentencePair("1", "rus", ScriptTag.LATN, "мир")], detect=False)
    assert kept[0].script is ScriptTag.LATN


def test_check_pairs():
    pairs = build_pairs([rec(1, "мир")])
    check_pairs(pairs)
    with pytest.raises(ValueError):
        check_pairs([SentencePair("1", "rus", ScriptTag.CYRL, "мир", "peace")])


def test_jsonl_round_trip(tmp_path):
    pairs = build_pairs([rec(1, "мир", "rus"), rec(2, encipher("ab", ScriptTag.TOYB), "toy")])
    path = tmp_path / "c.jsonl"
    write_jsonl(path, pairs)
    lines = [json.loads(x) for x in path.read_text(encoding="utf-8").splitlines()]
    assert set(lines[0]) == {"id", "lang", "script", "text", "translit"}
    assert lines[0]["script"] == "Cyrl"
    assert read_jsonl(path) == pairs


def test_jsonl_null_translit_and_missing_script(tmp_path):
    path = tmp_path / "raw.jsonl"
    path.write_text('{"id": "a", "lang": "rus", "text": "мир", "translit": null}\n', encoding="utf-8")
    (r,) = read_jsonl(path)
    assert r.script is ScriptTag.CYRL and r.translit is None


def test_jsonl_errors_have_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "text": "x"}\n{"id": "b"}\n', encoding="utf-8")
    with pytest.raises(ParseError) as exc:
        read_jsonl(path)
    assert exc.value.line == 2


def test_empty_text_rejected():
    with pytest.raises(ValueError):
        SentencePair("1", "eng", ScriptTag.LATN, "")
