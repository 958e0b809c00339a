"""
Per-segment smell vectors, city base-note distributions and z-scores.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from utils import PathLike, StatisticsError, ValidationError, write_csv

logger = logging.getLogger("smellscape")

MIN_TAGS = 30


@dataclass(frozen=True)
class SmellVector:
    segment_id: str
    fractions: Dict[str, float]
    tag_count: int

    def __getitem__(self, category: str) -> float:
        return self.fractions[category]


@dataclass(frozen=True)
class CityDistribution:
    fractions: Dict[str, float]
    tag_count: int

    def ranked(self) -> List[Tuple[str, float]]:
        """Descending fraction, ties broken lexicographically"""
        return sorted(self.fractions.items(), key=lambda kv: (-kv[1], kv[0]))


def segment_tags(
    by_segment: Mapping[str, Sequence[str]], matches: Mapping[str, Iterable[str]]
) -> Dict[str, Counter]:
    """
    Matched words per segment.

    Args:
        by_segment: Segment id -> assigned item ids
        matches: Item id -> matched word set (one occurrence per item)

    Returns:
        Segment id -> word counts over the assigned items
    """
    tags: Dict[str, Counter] = {}
    for seg_id, item_ids in sorted(by_segment.items()):
        counts: Counter = Counter()
        for item_id in item_ids:
            counts.update(set(matches.get(item_id, ())))
        tags[seg_id] = counts
    return tags


def _category_counts(
    tags: Mapping[str, int], word_to_category: Mapping[str, str], categories: Sequence[str]
) -> Tuple[Dict[str, int], int]:
    counts = {c: 0 for c in categories}
    uncategorized = 0
    for word, n in tags.items():
        category = word_to_category.get(word)
        if category in counts:
            counts[category] += n
        else:
            uncategorized += n
    return counts, uncategorized


def segment_smell_vector(
    segment_id: str,
    tags: Mapping[str, int],
    word_to_category: Mapping[str, str],
    categories: Sequence[str],
    min_tags: int = MIN_TAGS,
    include_uncategorized: bool = False,
) -> Optional[SmellVector]:
    """
    Category fractions of one segment's matched tags.

    Args:
        segment_id: Segment the tags were assigned to
        tags: Word -> occurrence count on the segment
        word_to_category: Top-level category per word
        categories: Category order of the vector
        min_tags: Smallest tag count for which a vector is emitted
        include_uncategorized: Count words outside the taxonomy in the denominator

    Returns:
        SmellVector, or None when the segment has fewer than min_tags tags
    """
    if min_tags < 1:
        raise ValidationError(f"min_tags must be >= 1, got {min_tags}")
    counts, uncategorized = _category_counts(tags, word_to_category, categories)
    total = sum(counts.values()) + (uncategorized if include_uncategorized else 0)
    if total < min_tags or total == 0:
        return None
    return SmellVector(segment_id, {c: counts[c] / total for c in categories}, total)


def smell_vectors(
    tags_by_segment: Mapping[str, Mapping[str, int]],
    word_to_category: Mapping[str, str],
    categories: Sequence[str],
    min_tags: int = MIN_TAGS,
    include_uncategorized: bool = False,
) -> List[SmellVector]:
    vectors = []
    for seg_id, tags in sorted(tags_by_segment.items()):
        vector = segment_smell_vector(seg_id, tags, word_to_category, categories, min_tags, include_uncategorized)
        if vector is not None:
            vectors.append(vector)
    logger.info(f"{len(vectors)} of {len(tags_by_segment)} tagged segments have >= {min_tags} tags")
    return vectors


def city_distribution(
    tags: Mapping[str, int], word_to_category: Mapping[str, str], categories: Sequence[str]
) -> CityDistribution:
    """
    Fraction of all categorized tags in a city per category (the base notes).

    Raises:
        StatisticsError: no categorized tag at all
    """
    counts, _ = _category_counts(tags, word_to_category, categories)
    total = sum(counts.values())
    if total == 0:
        raise StatisticsError("city distribution needs at least one categorized tag")
    return CityDistribution({c: counts[c] / total for c in categories}, total)


def zscore(values: Sequence[float]) -> np.ndarray:
    """Standardize with the population standard deviation; constant input is an error"""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise StatisticsError(f"z-scores need at least 2 values, got {values.size}")
    if np.ptp(values) == 0:
        raise StatisticsError("z-scores are undefined for constant values")
    return stats.zscore(values, ddof=0)


def vectors_frame(vectors: Sequence[SmellVector], categories: Sequence[str]) -> pd.DataFrame:
    """Vectors as a frame indexed by segment id: tag_count then one column per category"""
    rows = [[v.segment_id, v.tag_count] + [v.fractions[c] for c in categories] for v in vectors]
    frame = pd.DataFrame(rows, columns=["segment_id", "tag_count"] + list(categories))
    return frame.set_index("segment_id")


def write_vectors(vectors: Sequence[SmellVector], categories: Sequence[str], path: PathLike) -> Path:
    return write_csv(vectors_frame(vectors, categories), path, index=True)


def read_vectors(path: PathLike) -> Tuple[List[str], List[SmellVector]]:
    frame = pd.read_csv(path, dtype={"segment_id": str}, keep_default_na=False)
    categories = [c for c in frame.columns if c not in ("segment_id", "tag_count")]
    vectors = [
        SmellVector(str(row["segment_id"]), {c: float(row[c]) for c in categories}, int(row["tag_count"]))
        for _, row in frame.iterrows()
    ]
    return categories, vectors
