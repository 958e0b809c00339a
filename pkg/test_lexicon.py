"""
Tests for lexicon normalization, loading and term matching
"""

import random

import pytest

from lexicon import (
    LexiconValidationError,
    SmellTerm,
    TermMatcher,
    intersect_annotations,
    load_blocklist,
    load_lexicon,
    match_text,
    normalize_term,
    normalize_token,
    tokenize,
    write_lexicon,
)
from utils import ValidationError


def write_csv(path, rows, header="term,language,notes"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("Fumes,", "fumes"),
        ("", ""),
        ("GRASS", "grass"),
        ("#Smoke", "smoke"),
        ("\"freshly-cut\"", "freshly-cut"),
        ("Café", "café"),
    ],
)
def test_normalize_token(raw, expected):
    assert normalize_token(raw) == expected


def test_normalize_token_idempotent():
    for raw in ["Fumes,", "...Wet-Dog!!", "#BBQ", "  ¿Olor?  "]:
        once = normalize_token(raw)
        assert normalize_token(once) == once


def test_tokenize_splits_on_punctuation_but_keeps_hyphens():
    assert tokenize("Diesel-fumes, cut grass! #bbq") == ["diesel-fumes", "cut", "grass", "bbq"]
    assert tokenize("smoke/dust+petrol") == ["smoke", "dust", "petrol"]
    assert tokenize("   ") == []


def test_normalize_term_collapses_whitespace():
    assert normalize_term("  Burnt   Rubber ") == "burnt rubber"


@pytest.mark.parametrize(
    "lists,expected",
    [
        ([{"a", "b", "c"}, {"b", "c", "d"}, {"c", "b"}], ["b", "c"]),
        ([{"a"}, {"a"}, {"a"}], ["a"]),
        ([{"a"}, {"b"}, {"c"}], []),
    ],
)
def test_intersect_annotations(lists, expected):
    assert intersect_annotations(lists) == expected


def test_intersect_annotations_normalizes_terms():
    assert intersect_annotations([["Fumes"], ["fumes,"], ["FUMES"]]) == ["fumes"]


def test_intersect_annotations_needs_three_lists():
    with pytest.raises(ValidationError):
        intersect_annotations([{"a"}, {"a"}])


def test_intersect_annotations_rejects_empty_list():
    with pytest.raises(ValidationError):
        intersect_annotations([{"a"}, set(), {"a"}])


def test_match_set_semantics():
    matcher = TermMatcher.build(["fumes", "grass"], "en")
    assert match_text(matcher, "traffic fumes and more fumes") == {"fumes"}


def test_match_is_token_exact():
    matcher = TermMatcher.build(["fumes"], "en")
    assert match_text(matcher, "perfumes") == set()
    assert match_text(matcher, "Fumes!") == {"fumes"}


def test_empty_lexicon_matches_nothing():
    matcher = TermMatcher.build([], "en")
    assert match_text(matcher, "smoke fumes grass") == set()


def test_multiword_terms_match_contiguously():
    matcher = TermMatcher.build(["burnt rubber", "rubber"], "en")
    assert match_text(matcher, "smell of Burnt rubber") == {"burnt rubber", "rubber"}
    assert match_text(matcher, "burnt old rubber") == {"rubber"}


def test_hashtags_match_like_words():
    matcher = TermMatcher.build(["coffee"], "en")
    assert match_text(matcher, "morning #coffee") == {"coffee"}


def test_match_agrees_with_brute_force():
    rng = random.Random(7)
    vocab = ["smoke", "grass", "fumes", "bread", "rain", "dog", "wet", "the", "a", "street"]
    terms = ["smoke", "grass", "fumes", "wet dog", "bread"]
    matcher = TermMatcher.build(terms, "en")
    for _ in range(200):
        words = [rng.choice(vocab) for _ in range(rng.randint(0, 12))]
        text = " ".join(words)
        expected = {
            t for t in terms
            if any(words[i:i + len(t.split())] == t.split() for i in range(len(words)))
        }
        assert match_text(matcher, text) == expected


def test_load_lexicon(tmp_path):
    path = write_csv(tmp_path / "lex.csv", ["fumes,en,", "Grass,en,nature", "odeur,fr,"])
    lexicon = load_lexicon(path)
    assert len(lexicon) == 3
    assert lexicon.languages == ["en", "fr"]
    assert lexicon.normalized("en") == ["fumes", "grass"]
    assert lexicon.matcher("fr").match("une odeur") == {"odeur"}
    assert len(lexicon.version) == 12


def test_load_lexicon_285_terms(tmp_path):
    rows = [f"smellword{i},en," for i in range(285)]
    assert len(load_lexicon(write_csv(tmp_path / "lex.csv", rows))) == 285


def test_load_lexicon_drops_blocklisted_terms(tmp_path):
    path = write_csv(tmp_path / "lex.csv", ["orange,en,", "fumes,en,"])
    lexicon = load_lexicon(path, blocklist=["Orange"])
    assert lexicon.normalized() == ["fumes"]
    assert lexicon.blocklisted == ("orange",)


def test_load_lexicon_duplicate_rows(tmp_path):
    path = write_csv(tmp_path / "lex.csv", ["fumes,en,", "fumes,en,"])
    with pytest.raises(LexiconValidationError, match="fumes"):
        load_lexicon(path)


def test_load_lexicon_same_term_two_languages(tmp_path):
    path = write_csv(tmp_path / "lex.csv", ["parfum,fr,", "parfum,de,"])
    assert len(load_lexicon(path)) == 2


def test_load_lexicon_unknown_language(tmp_path):
    path = write_csv(tmp_path / "lex.csv", ["fumes,xx,"])
    with pytest.raises(LexiconValidationError, match="unknown language"):
        load_lexicon(path)


def test_load_lexicon_declared_language_without_terms(tmp_path):
    path = write_csv(tmp_path / "lex.csv", ["fumes,en,"])
    with pytest.raises(LexiconValidationError, match="'es'"):
        load_lexicon(path, languages=["en", "es"])


def test_load_lexicon_empty_term(tmp_path):
    path = write_csv(tmp_path / "lex.csv", ["!!,en,"])
    with pytest.raises(LexiconValidationError, match="empty"):
        load_lexicon(path)


def test_blocklist_file(tmp_path):
    path = tmp_path / "block.txt"
    path.write_text("Orange\n\n  lime \n", encoding="utf-8")
    assert load_blocklist(path) == {"orange", "lime"}
    assert load_blocklist(None) == frozenset()


def test_write_lexicon_reloads(tmp_path):
    terms = [SmellTerm("Wet Dog", "en"), SmellTerm("fumes", "en", "traffic")]
    path = write_lexicon(terms, tmp_path / "out.csv")
    assert load_lexicon(path).normalized() == ["fumes", "wet dog"]
