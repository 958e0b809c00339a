"""
Smell lexicon loading, validation and exact term matching.

A lexicon is a CSV of `term,language,notes` rows. Terms are normalized
(NFC, lowercase, edge punctuation stripped, internal hyphens kept) and matched
token-exactly against item text, with one match per term per item.
"""

import hashlib
import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import pandas as pd

from utils import PathLike, ValidationError, read_lines, write_csv

logger = logging.getLogger("smellscape")

LEXICON_COLUMNS = ["term", "language", "notes"]

HYPHENS = frozenset("-‐‑")

ISO_639_1 = frozenset(
    """
    aa ab ae af ak am an ar as av ay az ba be bg bh bi bm bn bo br bs ca ce ch co cr
    cs cu cv cy da de dv dz ee el en eo es et eu fa ff fi fj fo fr fy ga gd gl gn gu
    gv ha he hi ho hr ht hu hy hz ia id ie ig ii ik io is it iu ja jv ka kg ki kj kk
    kl km kn ko kr ks ku kv kw ky la lb lg li ln lo lt lu lv mg mh mi mk ml mn mr ms
    mt my na nb nd ne ng nl nn no nr nv ny oc oj om or os pa pi pl ps pt qu rm rn ro
    ru rw sa sc sd se sg si sk sl sm sn so sq sr ss st su sv sw ta te tg th ti tk tl
    tn to tr ts tt tw ty ug uk ur uz ve vi vo wa wo xh yi yo za zh zu
    """.split()
)


class LexiconValidationError(ValidationError):
    """Lexicon file violates a lexicon invariant"""


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _is_separator(ch: str) -> bool:
    if ch.isspace():
        return True
    if ch in HYPHENS:
        return False
    return unicodedata.category(ch)[0] in ("P", "S")


def normalize_token(raw: str) -> str:
    """
    Normalize one token for exact comparison.

    Lowercases, applies Unicode NFC and strips leading/trailing punctuation
    (which also removes a hashtag '#'); internal hyphens survive. Idempotent.
    """
    text = unicodedata.normalize("NFC", raw)
    text = unicodedata.normalize("NFC", text.lower())
    start, end = 0, len(text)
    while start < end and (_is_punct(text[start]) or text[start].isspace()):
        start += 1
    while end > start and (_is_punct(text[end - 1]) or text[end - 1].isspace()):
        end -= 1
    return text[start:end]


def tokenize(text: str) -> List[str]:
    """Split text into normalized tokens on whitespace, punctuation and symbols (not hyphens)"""
    tokens: List[str] = []
    current: List[str] = []
    for ch in unicodedata.normalize("NFC", text):
        if _is_separator(ch):
            if current:
                tokens.append("".join(current))
                current = []
        else:
            current.append(ch)
    if current:
        tokens.append("".join(current))
    normalized = (normalize_token(tok) for tok in tokens)
    return [tok for tok in normalized if tok]


def normalize_term(surface: str) -> str:
    """Canonical form of a (possibly multi-word) lexicon term: tokens joined by one space"""
    return " ".join(tokenize(surface))


@dataclass(frozen=True, order=True)
class SmellTerm:
    surface: str
    language: str
    notes: str = ""

    @property
    def normalized(self) -> str:
        return normalize_term(self.surface)


@dataclass(frozen=True)
class TermMatcher:
    """
    Immutable phrase table over one language's normalized terms.

    Terms are stored as token tuples grouped by length, so matching a text is a
    set lookup per (start position, phrase length). Safe to share across threads.
    """

    language: str
    phrases: Dict[int, FrozenSet[Tuple[str, ...]]] = field(default_factory=dict)

    @classmethod
    def build(cls, terms: Iterable[str], language: str) -> "TermMatcher":
        by_length: Dict[int, set] = {}
        for term in terms:
            tokens = tuple(tokenize(term))
            if tokens:
                by_length.setdefault(len(tokens), set()).add(tokens)
        return cls(language, {n: frozenset(p) for n, p in sorted(by_length.items())})

    @property
    def terms(self) -> FrozenSet[str]:
        return frozenset(" ".join(p) for group in self.phrases.values() for p in group)

    def match(self, text: str) -> FrozenSet[str]:
        tokens = tokenize(text)
        found = set()
        for n, group in self.phrases.items():
            for i in range(len(tokens) - n + 1):
                candidate = tuple(tokens[i:i + n])
                if candidate in group:
                    found.add(" ".join(candidate))
        return frozenset(found)


@dataclass(frozen=True)
class SmellLexicon:
    terms: FrozenSet[SmellTerm]
    version: str
    blocklisted: Tuple[str, ...] = ()

    @property
    def languages(self) -> List[str]:
        return sorted({t.language for t in self.terms})

    def normalized(self, language: Optional[str] = None) -> List[str]:
        return sorted({t.normalized for t in self.terms if language is None or t.language == language})

    def matcher(self, language: str) -> TermMatcher:
        return TermMatcher.build(self.normalized(language), language)

    def matchers(self) -> Dict[str, TermMatcher]:
        return {lang: self.matcher(lang) for lang in self.languages}

    def __len__(self) -> int:
        return len(self.terms)


def match_text(matcher: TermMatcher, text: str) -> FrozenSet[str]:
    """
    Match lexicon terms in a text.

    Args:
        matcher: Matcher built for the text's language
        text: Item text (tags, caption + hashtags, or tweet body)

    Returns:
        The set of normalized terms whose tokens occur contiguously in the text
    """
    return matcher.match(text)


def intersect_annotations(lists: Sequence[Iterable[str]]) -> List[str]:
    """
    Combine annotator term lists conservatively by intersection.

    Args:
        lists: At least three non-empty term lists, one per annotator

    Returns:
        Sorted normalized terms present in every list
    """
    if len(lists) < 3:
        raise ValidationError(f"need at least 3 annotator lists, got {len(lists)}")
    normalized = []
    for i, terms in enumerate(lists):
        terms = {normalize_term(t) for t in terms} - {""}
        if not terms:
            raise ValidationError(f"annotator list {i} is empty")
        normalized.append(terms)
    return sorted(set.intersection(*normalized))


def load_annotations(path: PathLike) -> List[str]:
    """One annotator's list: plain text, one term per line"""
    return read_lines(path)


def load_blocklist(path: Optional[PathLike]) -> FrozenSet[str]:
    if path is None:
        return frozenset()
    return frozenset(normalize_term(t) for t in read_lines(path)) - {""}


def load_lexicon(
    path: PathLike,
    blocklist: Iterable[str] = (),
    languages: Optional[Sequence[str]] = None,
) -> SmellLexicon:
    """
    Load and validate a lexicon CSV.

    Args:
        path: CSV file with header `term,language,notes`
        blocklist: Ambiguous terms to drop (e.g. "orange")
        languages: Declared languages; each must keep at least one term

    Returns:
        A validated SmellLexicon

    Raises:
        LexiconValidationError: on duplicates, empty terms, unknown language
            codes or a declared language left without terms
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in ("term", "language") if c not in frame.columns]
    if missing:
        raise LexiconValidationError(f"{path}: missing columns {missing}")
    if "notes" not in frame.columns:
        frame["notes"] = ""

    blocked = {normalize_term(t) for t in blocklist} - {""}
    seen: Dict[Tuple[str, str], int] = {}
    duplicates, empty, unknown = [], [], []
    terms, removed = [], []
    for row_no, row in enumerate(frame.itertuples(index=False), start=2):
        language = row.language.strip().lower()
        term = SmellTerm(row.term.strip(), language, row.notes.strip())
        key = (term.normalized, language)
        if not key[0]:
            empty.append(row_no)
            continue
        if language not in ISO_639_1:
            unknown.append(f"{row.term}@{row.language} (line {row_no})")
            continue
        if key in seen:
            duplicates.append(f"{key[0]},{language} (lines {seen[key]} and {row_no})")
            continue
        seen[key] = row_no
        if key[0] in blocked:
            removed.append(key[0])
            continue
        terms.append(term)

    if empty:
        raise LexiconValidationError(f"{path}: empty terms on lines {empty}")
    if unknown:
        raise LexiconValidationError(f"{path}: unknown language codes: {', '.join(unknown)}")
    if duplicates:
        raise LexiconValidationError(f"{path}: duplicate terms: {'; '.join(duplicates)}")

    if removed:
        logger.warning(f"Removed {len(removed)} blocklisted terms from {path.name}: {sorted(removed)}")

    lexicon = SmellLexicon(
        frozenset(terms),
        version=hashlib.sha256(path.read_bytes()).hexdigest()[:12],
        blocklisted=tuple(sorted(removed)),
    )
    for language in languages or []:
        if not lexicon.normalized(language.lower()):
            raise LexiconValidationError(f"{path}: no terms for declared language '{language}'")
    logger.info(f"Loaded {len(lexicon)} terms in {lexicon.languages} from {path.name}")
    return lexicon


def write_lexicon(terms: Iterable[SmellTerm], path: PathLike) -> Path:
    rows = sorted((t.normalized, t.language, t.notes) for t in terms)
    return write_csv(pd.DataFrame(rows, columns=LEXICON_COLUMNS), path)
