"""
Static report artifacts: z-score heatmaps, base and mid-level notes, dataset summary.
"""

import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd

from ingest import GeoItem, StreetSegment, segment_feature
from profiles import CityDistribution, SmellVector, zscore
from utils import PathLike, StatisticsError, write_csv, write_json

logger = logging.getLogger("smellscape")

SUMMARY_COLUMNS = ["source", "users", "items", "smell_words", "segments"]


def layer_filename(layer: str) -> str:
    return "heatmap_" + re.sub(r"[^\w.-]+", "_", layer) + ".geojson"


def emit_heatmap(
    zscores: Mapping[str, float], segments: Mapping[str, StreetSegment], layer: str
) -> Tuple[Dict, int]:
    """
    One LineString feature per z-scored segment.

    Args:
        zscores: Segment id -> z-score
        segments: Segment geometry by id
        layer: Category or pollutant name stored on every feature

    Returns:
        (GeoJSON FeatureCollection, number of segments skipped for missing geometry)
    """
    features = []
    skipped = 0
    for seg_id in sorted(zscores):
        segment = segments.get(seg_id)
        if segment is None:
            skipped += 1
            continue
        properties = {"segment_id": seg_id, "category_or_pollutant": layer, "zscore": float(zscores[seg_id])}
        feature = segment_feature(segment, properties)
        feature["properties"].pop("id", None)
        feature["properties"].pop("city", None)
        features.append(feature)
    if skipped:
        logger.warning(f"heatmap {layer}: {skipped} segments without geometry skipped")
    return {"type": "FeatureCollection", "features": features}, skipped


def zscore_layer(values: Mapping[str, float]) -> Dict[str, float]:
    """Segment id -> population z-score; raises StatisticsError for constant layers"""
    ids = sorted(values)
    return dict(zip(ids, zscore([values[s] for s in ids]).tolist()))


def write_heatmaps(
    layers: Mapping[str, Mapping[str, float]], segments: Mapping[str, StreetSegment], out_dir: PathLike
) -> Dict[str, Path]:
    """Z-score every layer and write one GeoJSON per layer; constant layers are omitted"""
    written = {}
    for layer in sorted(layers):
        try:
            z = zscore_layer(layers[layer])
        except StatisticsError as e:
            logger.warning(f"heatmap {layer} omitted: {e}")
            continue
        collection, _ = emit_heatmap(z, segments, layer)
        written[layer] = write_json(collection, Path(out_dir) / layer_filename(layer))
    return written


def report_base_notes(distribution: CityDistribution) -> Tuple[pd.DataFrame, str]:
    """
    Rank categories by their share of the city's tags.

    Returns:
        (frame with rank, category, fraction; human-readable text)
    """
    ranked = distribution.ranked()
    frame = pd.DataFrame(
        [(i + 1, c, f) for i, (c, f) in enumerate(ranked)], columns=["rank", "category", "fraction"]
    )
    lines = [f"Base notes over {distribution.tag_count} categorized tags:"]
    lines += [f"{i + 1:>3}. {c:<24} {f * 100:6.2f}%" for i, (c, f) in enumerate(ranked)]
    return frame, "\n".join(lines) + "\n"


def write_base_notes(distribution: CityDistribution, csv_path: PathLike, text_path: PathLike) -> Tuple[Path, Path]:
    frame, text = report_base_notes(distribution)
    text_path = Path(text_path)
    text_path.parent.mkdir(parents=True, exist_ok=True)
    text_path.write_text(text, encoding="utf-8")
    return write_csv(frame, csv_path), text_path


def mid_level_notes(vectors: Sequence[SmellVector], categories: Sequence[str], quantile: float = 0.9) -> pd.DataFrame:
    """
    Localized notes: per category, the segments in its top z-score decile.

    Returns:
        Frame with category, segment_id, fraction, zscore sorted by category then descending z
    """
    rows: List[Tuple[str, str, float, float]] = []
    for category in categories:
        values = {v.segment_id: v.fractions[category] for v in vectors}
        try:
            z = zscore_layer(values)
        except StatisticsError:
            continue
        cut = float(np.quantile(list(z.values()), quantile))
        hot = sorted(((s, v) for s, v in z.items() if v >= cut), key=lambda sv: (-sv[1], sv[0]))
        rows.extend((category, s, values[s], v) for s, v in hot)
    return pd.DataFrame(rows, columns=["category", "segment_id", "fraction", "zscore"])


def dataset_summary(
    items_by_source: Mapping[str, Iterable[GeoItem]],
    matches: Mapping[str, Iterable[str]],
    item_segments: Mapping[str, Iterable[str]],
) -> pd.DataFrame:
    """
    Per-source dataset statistics.

    Args:
        items_by_source: Source name -> ingested items
        matches: Item id -> matched smell words
        item_segments: Item id -> segments it was assigned to

    Returns:
        Frame with source, users, items, smell_words, segments
    """
    rows = []
    for source in sorted(items_by_source):
        users, segments = set(), set()
        n_items = n_words = 0
        for item in items_by_source[source]:
            n_items += 1
            users.add(item.user)
            n_words += len(set(matches.get(item.id, ())))
            segments.update(item_segments.get(item.id, ()))
        rows.append((source, len(users), n_items, n_words, len(segments)))
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
