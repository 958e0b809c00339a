"""
Synthetic smellscape city.

A regular street grid with planted zones: each zone fixes the mix of smell
categories its items talk about and the pollutant level of its streets. Items
are written in the three platform dump formats, alongside segments, air
quality, a lexicon, category anchors, ground truth and a ready-to-run pipeline
config, so every stage can be checked against known answers.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pydantic
from pydantic import BaseModel, Field

from config import DEFAULT_AQI_BANDS
from geo import LocalProjection
from ingest import (
    Pollutant,
    SegmentPollution,
    Source,
    StationReading,
    StreetSegment,
    compute_aqi,
    write_air_quality,
    write_segments,
)
from lexicon import SmellTerm, write_lexicon
from utils import PathLike, ValidationError, ensure_dir, write_json, write_ndjson

logger = logging.getLogger("smellscape")

CATEGORY_WORDS: Dict[str, List[str]] = {
    "emissions": ["exhaust", "fumes", "diesel", "petrol", "smog", "tar", "asphalt", "burnt rubber"],
    "nature": ["grass", "flowers", "trees", "lavender", "roses", "leaves", "pine", "moss", "blossom"],
    "food": ["bread", "coffee", "curry", "spices", "bakery", "chips", "garlic", "cheese", "barbecue"],
    "waste": ["rubbish", "garbage", "bins", "sewage", "rotten", "urine", "mould"],
    "animals": ["horse", "manure", "stable", "pigeons", "wet dog", "hay"],
}

FILLER_WORDS = ["street", "walk", "city", "evening", "friends", "view", "corner", "sunday"]


class ZoneSpec(BaseModel):
    """Rectangle in grid units (intersection indices); stride/orientation select every k-th street"""

    name: str
    x0: float
    y0: float
    x1: float
    y1: float
    orientation: Optional[str] = None
    stride: int = 1
    weights: Dict[str, float]
    no2: float


class SyntheticSpec(BaseModel):
    grid_x: int = Field(20, ge=2)
    grid_y: int = Field(20, ge=2)
    spacing: float = Field(100.0, gt=0)
    origin_lat: float = 51.5074
    origin_lon: float = -0.1278
    items_per_segment: float = 15.0
    extra_tags_per_item: float = 2.0
    jitter: float = 8.0
    users: int = Field(200, ge=1)
    retweet_rate: float = 0.05
    source_shares: Dict[str, float] = {"flickr": 0.6, "instagram": 0.25, "twitter": 0.15}
    categories: Dict[str, List[str]] = CATEGORY_WORDS
    background_weights: Dict[str, float] = {
        "emissions": 0.15, "nature": 0.15, "food": 0.3, "waste": 0.2, "animals": 0.2,
    }
    background_no2: float = 40.0
    no2_noise: float = 5.0
    stations: int = Field(4, ge=0)
    zones: List[ZoneSpec] = [
        ZoneSpec(name="park", x0=2, y0=2, x1=8, y1=8,
                 weights={"nature": 0.7, "animals": 0.15, "food": 0.1, "emissions": 0.05}, no2=15.0),
        ZoneSpec(name="main_road", x0=0, y0=0, x1=19, y1=19, orientation="h", stride=3,
                 weights={"emissions": 0.6, "food": 0.15, "waste": 0.15, "nature": 0.1}, no2=70.0),
        ZoneSpec(name="market", x0=12, y0=11, x1=16, y1=15,
                 weights={"food": 0.7, "waste": 0.15, "emissions": 0.1, "nature": 0.05}, no2=40.0),
    ]


def _check_spec(spec: SyntheticSpec) -> None:
    rates = {"items_per_segment": spec.items_per_segment, "extra_tags_per_item": spec.extra_tags_per_item,
             "jitter": spec.jitter, "retweet_rate": spec.retweet_rate, "no2_noise": spec.no2_noise}
    for zone in spec.zones:
        rates.update({f"{zone.name}.{c}": w for c, w in zone.weights.items()})
        rates[f"{zone.name}.no2"] = zone.no2
        unknown = set(zone.weights) - set(spec.categories)
        if unknown:
            raise ValidationError(f"zone {zone.name} weights unknown categories {sorted(unknown)}")
        if zone.stride < 1:
            raise ValidationError(f"zone {zone.name} stride must be >= 1")
    rates.update({f"background.{c}": w for c, w in spec.background_weights.items()})
    rates.update({f"source.{s}": w for s, w in spec.source_shares.items()})
    negative = sorted(k for k, v in rates.items() if v < 0)
    if negative:
        raise ValidationError(f"synthetic rates must be non-negative: {negative}")
    if spec.retweet_rate >= 1:
        raise ValidationError("retweet_rate must be < 1")
    if sum(spec.source_shares.values()) <= 0:
        raise ValidationError("source shares must not all be zero")
    for s in spec.source_shares:
        Source(s)


def _grid_segments(spec: SyntheticSpec) -> List[Tuple[str, str, int, Tuple[float, float], Tuple[float, float]]]:
    """(id, orientation, street index, start, end) in grid units"""
    segments = []
    for j in range(spec.grid_y):
        for i in range(spec.grid_x - 1):
            segments.append((f"h{j:03d}-{i:03d}", "h", j, (i, j), (i + 1, j)))
    for i in range(spec.grid_x):
        for j in range(spec.grid_y - 1):
            segments.append((f"v{i:03d}-{j:03d}", "v", i, (i, j), (i, j + 1)))
    return segments


def _zone_of(spec: SyntheticSpec, orientation: str, street: int, a, b) -> Optional[ZoneSpec]:
    mx, my = (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0
    for zone in spec.zones:
        if not (zone.x0 <= mx <= zone.x1 and zone.y0 <= my <= zone.y1):
            continue
        if zone.orientation is not None and (orientation != zone.orientation or street % zone.stride):
            continue
        return zone
    return None


def _normalized(weights: Dict[str, float], categories: List[str]) -> np.ndarray:
    w = np.array([weights.get(c, 0.0) for c in categories], dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValidationError(f"category weights must not all be zero: {weights}")
    return w / total


def _record(item_id: str, source: str, user: str, lat: float, lon: float, ts: int,
            words: List[str], filler: List[str], retweet: bool) -> Dict[str, Any]:
    record: Dict[str, Any] = {"id": item_id, "source": source, "user": user, "lat": lat, "lon": lon,
                              "ts": ts, "lang": "en"}
    if source == "flickr":
        record["tags"] = words + filler
    elif source == "instagram":
        record["caption"] = " ".join(filler + words[:1])
        # multi-word terms stay plain text, a hashtag would glue their tokens
        record["hashtags"] = [w if " " in w else "#" + w for w in words[1:]]
    else:
        record["text"] = " ".join(filler[:1] + words + filler[1:]) + "!"
        record["is_retweet"] = retweet
        record["is_reply"] = False
    return record


def generate_synthetic_city(spec: Optional[Any] = None, seed: int = 0, out_dir: PathLike = "synthetic") -> Dict[str, Path]:
    """
    Generate a synthetic city on disk.

    Args:
        spec: SyntheticSpec or a mapping of its fields; defaults to a 20x20 grid
            with a park, main roads and a market
        seed: Generator seed; a fixed seed gives byte-identical files
        out_dir: Output directory

    Returns:
        Written paths keyed by role (items per source, segments, air_quality,
        lexicon, blocklist, labels, ground_truth, config)

    Raises:
        ValidationError: negative rates or inconsistent zones
    """
    try:
        spec = spec if isinstance(spec, SyntheticSpec) else SyntheticSpec.model_validate(spec or {})
    except pydantic.ValidationError as e:
        raise ValidationError(f"invalid synthetic city spec: {e}") from e
    _check_spec(spec)
    rng = np.random.default_rng(seed)
    out = ensure_dir(out_dir)
    categories = sorted(spec.categories)
    sources = sorted(spec.source_shares)
    source_p = np.array([spec.source_shares[s] for s in sources]) / sum(spec.source_shares.values())

    projection = LocalProjection(spec.origin_lat, spec.origin_lon)
    cx, cy = (spec.grid_x - 1) * spec.spacing / 2.0, (spec.grid_y - 1) * spec.spacing / 2.0

    def to_lonlat(gx: float, gy: float) -> Tuple[float, float]:
        lat, lon = projection.unproject(gx - cx, gy - cy)
        return float(lon), float(lat)

    segments, pollution, truth_segments = [], [], {}
    records: Dict[str, List[Dict[str, Any]]] = {s: [] for s in sources}
    realized_totals = {c: 0 for c in categories}
    item_no = 0
    for seg_id, orientation, street, a, b in _grid_segments(spec):
        zone = _zone_of(spec, orientation, street, a, b)
        weights = _normalized(zone.weights if zone else spec.background_weights, categories)
        no2 = max((zone.no2 if zone else spec.background_no2) + rng.normal(0.0, spec.no2_noise), 0.0)
        pm10 = max(0.5 * no2 + rng.normal(0.0, 2.0), 0.0)
        start = (a[0] * spec.spacing, a[1] * spec.spacing)
        end = (b[0] * spec.spacing, b[1] * spec.spacing)
        segments.append(StreetSegment(seg_id, (to_lonlat(*start), to_lonlat(*end)), "synthetic"))
        pollution.append(SegmentPollution(segment_id=seg_id, pollutant=Pollutant.NO2, concentration=round(no2, 3)))
        pollution.append(SegmentPollution(segment_id=seg_id, pollutant=Pollutant.PM10, concentration=round(pm10, 3)))

        realized = {c: 0 for c in categories}
        for _ in range(rng.poisson(spec.items_per_segment)):
            category = categories[rng.choice(len(categories), p=weights)]
            vocabulary = spec.categories[category]
            k = min(1 + rng.poisson(spec.extra_tags_per_item), len(vocabulary))
            words = [vocabulary[i] for i in sorted(rng.choice(len(vocabulary), size=k, replace=False))]
            t = rng.uniform(0.3, 0.7)
            along = (start[0] + t * (end[0] - start[0]), start[1] + t * (end[1] - start[1]))
            offset = rng.normal(0.0, spec.jitter)
            gx, gy = (along[0], along[1] + offset) if orientation == "h" else (along[0] + offset, along[1])
            lon, lat = to_lonlat(gx, gy)
            source = sources[rng.choice(len(sources), p=source_p)]
            retweet = source == "twitter" and rng.random() < spec.retweet_rate
            filler = [FILLER_WORDS[i] for i in rng.choice(len(FILLER_WORDS), size=2, replace=False)]
            item_no += 1
            records[source].append(_record(
                f"{source[:2]}{item_no:07d}", source, f"u{rng.integers(spec.users):04d}",
                round(lat, 7), round(lon, 7), int(1420070400 + rng.integers(0, 365 * 86400)),
                words, filler, retweet,
            ))
            if not retweet:
                realized[category] += len(words)
        for c, n in realized.items():
            realized_totals[c] += n
        truth_segments[seg_id] = {
            "zone": zone.name if zone else "background",
            "weights": dict(zip(categories, weights.tolist())),
            "realized_tags": realized,
            "NO2": round(no2, 3),
            "PM10": round(pm10, 3),
        }

    stations = []
    side = int(np.ceil(np.sqrt(spec.stations))) if spec.stations else 0
    for s in range(spec.stations):
        gx = (s % side + 0.5) * (spec.grid_x - 1) * spec.spacing / side
        gy = (s // side + 0.5) * (spec.grid_y - 1) * spec.spacing / side
        lon, lat = to_lonlat(gx, gy)
        no2 = max(spec.background_no2 + rng.normal(0.0, spec.no2_noise), 0.0)
        stations.append(StationReading(
            station_id=f"st{s + 1:02d}", lat=round(lat, 7), lon=round(lon, 7), pollutant=Pollutant.NO2,
            aqi=compute_aqi(Pollutant.NO2, no2, DEFAULT_AQI_BANDS), concentration=round(no2, 3),
        ))

    paths: Dict[str, Path] = {}
    for source in sources:
        path = out / f"{source}.ndjson"
        write_ndjson(records[source], path)
        paths[f"items_{source}"] = path
    paths["segments"] = write_segments(segments, out / "segments.geojson")
    paths["air_quality"] = write_air_quality(stations, pollution, out / "air_quality.csv")
    terms = [SmellTerm(w, "en", c) for c, words in spec.categories.items() for w in words]
    terms.append(SmellTerm("orange", "en", "ambiguous"))
    paths["lexicon"] = write_lexicon(terms, out / "lexicon.csv")
    paths["blocklist"] = out / "blocklist.txt"
    paths["blocklist"].write_text("orange\n", encoding="utf-8")
    anchors = {spec.categories[c][0]: c for c in categories}
    paths["labels"] = write_json(anchors, out / "labels.json")

    total = sum(realized_totals.values())
    paths["ground_truth"] = write_json({
        "seed": seed,
        "categories": {c: sorted(spec.categories[c]) for c in categories},
        "zones": [z.model_dump() for z in spec.zones],
        "segments": truth_segments,
        "city_distribution": {c: (n / total if total else 0.0) for c, n in realized_totals.items()},
        "realized_tags": realized_totals,
    }, out / "ground_truth.json")

    lons = [p[0] for s in segments for p in s.polyline]
    lats = [p[1] for s in segments for p in s.polyline]
    margin = 0.002
    paths["config"] = write_json({
        "city": "synthetic",
        "bbox": {
            "min_lat": round(min(lats) - margin, 7), "min_lon": round(min(lons) - margin, 7),
            "max_lat": round(max(lats) + margin, 7), "max_lon": round(max(lons) + margin, 7),
        },
        "inputs": {
            "items": {s: f"{s}.ndjson" for s in sources},
            "segments": "segments.geojson",
            "air_quality": "air_quality.csv",
            "lexicon": "lexicon.csv",
            "blocklist": "blocklist.txt",
            "labels": "labels.json",
        },
        "languages": ["en"],
        "expected_categories": len(categories),
        "seed": seed,
        "output_dir": "output",
        "sweep": {"sizes": [10, 25, 50, 100], "pairs": [["emissions", "NO2"], ["nature", "NO2"]]},
    }, out / "pipeline.json")
    logger.info(
        f"Synthetic city: {len(segments)} segments, {sum(len(r) for r in records.values())} items, "
        f"{len(stations)} stations in {out}"
    )
    return paths
