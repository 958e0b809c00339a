"""
Readers for geo-referenced social media dumps, street segments and air quality.

Each reader validates records one by one; bad records are counted in a report
and skipped, only an unreadable file is fatal.
"""

import json
import logging
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from utils import PathLike, SmellscapeError, ValidationError, write_csv, write_json, write_ndjson

logger = logging.getLogger("smellscape")

AIR_QUALITY_COLUMNS = ["station_or_segment_id", "lat", "lon", "pollutant", "aqi", "concentration"]


class Source(str, Enum):
    FLICKR = "flickr"
    INSTAGRAM = "instagram"
    TWITTER = "twitter"
    OTHER = "other"


class Pollutant(str, Enum):
    CO = "CO"
    NO2 = "NO2"
    O3 = "O3"
    PM10 = "PM10"
    PM25 = "PM2.5"
    SO2 = "SO2"


class IngestError(SmellscapeError):
    """An input file could not be read at all"""


class BBox(BaseModel):
    """City bounding box in WGS84 degrees"""

    model_config = ConfigDict(frozen=True)

    min_lat: float = Field(ge=-90, le=90)
    min_lon: float = Field(ge=-180, le=180)
    max_lat: float = Field(ge=-90, le=90)
    max_lon: float = Field(ge=-180, le=180)

    def contains(self, lat: float, lon: float) -> bool:
        return self.min_lat <= lat <= self.max_lat and self.min_lon <= lon <= self.max_lon

    @property
    def centroid(self) -> Tuple[float, float]:
        return (self.min_lat + self.max_lat) / 2.0, (self.min_lon + self.max_lon) / 2.0


class GeoItem(BaseModel):
    """One geo-referenced social media record"""

    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    source: Source
    user: str
    lat: float = Field(ge=-90, le=90)
    lon: float = Field(ge=-180, le=180)
    timestamp: int
    text: str
    language: str = Field(min_length=2, max_length=2)

    @field_validator("language")
    @classmethod
    def _lower_language(cls, v: str) -> str:
        return v.lower()

    @field_validator("lat", "lon")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("coordinate must be finite")
        return v


class StationReading(BaseModel):
    model_config = ConfigDict(frozen=True)

    station_id: str = Field(min_length=1)
    lat: float = Field(ge=-90, le=90)
    lon: float = Field(ge=-180, le=180)
    pollutant: Pollutant
    aqi: int = Field(ge=1)
    concentration: Optional[float] = Field(default=None, ge=0)


class SegmentPollution(BaseModel):
    model_config = ConfigDict(frozen=True)

    segment_id: str = Field(min_length=1)
    pollutant: Pollutant
    concentration: float = Field(ge=0)


@dataclass(frozen=True)
class StreetSegment:
    """A street portion between two intersections; polyline points are (lon, lat)"""

    id: str
    polyline: Tuple[Tuple[float, float], ...]
    city: str = ""


@dataclass
class ItemFilters:
    drop_retweets_replies: bool = True
    bbox: Optional[BBox] = None


@dataclass
class ReadReport:
    """Counts for one input file; lines == parsed + skipped"""

    path: str = ""
    lines: int = 0
    parsed: int = 0
    invalid: int = 0
    filtered: Dict[str, int] = field(default_factory=dict)

    @property
    def skipped(self) -> int:
        return self.invalid + sum(self.filtered.values())

    def reject(self, reason: str, where: Any) -> None:
        self.invalid += 1
        logger.debug(f"{self.path}:{where}: skipped ({reason})")

    def drop(self, reason: str) -> None:
        self.filtered[reason] = self.filtered.get(reason, 0) + 1

    def log(self, kind: str) -> None:
        if self.skipped:
            logger.warning(
                f"{self.path}: {self.parsed} {kind} parsed, {self.invalid} invalid, filtered {dict(sorted(self.filtered.items()))}"
            )
        else:
            logger.info(f"{self.path}: {self.parsed} {kind} parsed")

    def as_dict(self) -> Dict[str, Any]:
        return {
            "path": self.path,
            "lines": self.lines,
            "parsed": self.parsed,
            "invalid": self.invalid,
            "filtered": dict(sorted(self.filtered.items())),
        }


def _item_text(record: Mapping[str, Any]) -> str:
    """Flickr tags, Instagram caption + hashtags, or the plain text field"""
    parts: List[str] = []
    text = record.get("text")
    if isinstance(text, list):
        parts.extend(str(t) for t in text)
    elif text is not None:
        parts.append(str(text))
    for key in ("tags", "caption", "hashtags"):
        value = record.get(key)
        if isinstance(value, list):
            parts.extend(str(v) for v in value)
        elif value:
            parts.append(str(value))
    return " ".join(p for p in parts if p)


def parse_item(record: Mapping[str, Any], source: Optional[Source] = None) -> GeoItem:
    """Validate one NDJSON record; raises pydantic.ValidationError or ValueError"""
    if not isinstance(record, Mapping):
        raise ValueError("record is not a JSON object")
    record_source = record.get("source", source.value if source else None)
    if source is not None and record_source != source.value:
        raise ValueError(f"source '{record_source}' does not match '{source.value}'")
    return GeoItem(
        id=str(record["id"]),
        source=record_source,
        user=str(record.get("user", "")),
        lat=record["lat"],
        lon=record["lon"],
        timestamp=int(record["ts"]),
        text=_item_text(record),
        language=record.get("lang", "en"),
    )


def read_items(
    path: PathLike,
    source: Optional[Source] = None,
    filters: Optional[ItemFilters] = None,
    report: Optional[ReadReport] = None,
) -> Iterator[GeoItem]:
    """
    Stream GeoItems from a newline-delimited JSON dump.

    Args:
        path: NDJSON file with fields id, source, user, lat, lon, ts, text, lang,
            is_retweet?, is_reply?
        source: Expected source; fills records that omit it
        filters: Retweet/reply and bounding-box filters
        report: Filled with line, parse and skip counts while iterating

    Returns:
        Iterator of valid, unfiltered GeoItems in file order
    """
    filters = filters or ItemFilters()
    report = report if report is not None else ReadReport()
    report.path = str(path)
    seen_ids = set()
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise IngestError(f"cannot read items from {path}: {e}") from e
    with handle:
        for line_no, line in enumerate(handle, start=1):
            report.lines += 1
            try:
                record = json.loads(line)
                item = parse_item(record, source)
            except (ValueError, KeyError, TypeError) as e:
                report.reject(str(e).splitlines()[0] if str(e) else type(e).__name__, line_no)
                continue
            if item.id in seen_ids:
                report.reject(f"duplicate id {item.id}", line_no)
                continue
            seen_ids.add(item.id)
            if item.source is Source.TWITTER and filters.drop_retweets_replies:
                if record.get("is_retweet") is True:
                    report.drop("retweet")
                    continue
                if record.get("is_reply") is True:
                    report.drop("reply")
                    continue
            if filters.bbox is not None and not filters.bbox.contains(item.lat, item.lon):
                report.drop("outside_bbox")
                continue
            report.parsed += 1
            yield item
    report.log("items")


def item_to_record(item: GeoItem) -> Dict[str, Any]:
    return {
        "id": item.id,
        "source": item.source.value,
        "user": item.user,
        "lat": item.lat,
        "lon": item.lon,
        "ts": item.timestamp,
        "text": item.text,
        "lang": item.language,
    }


def write_items(items: Sequence[GeoItem], path: PathLike) -> int:
    return write_ndjson((item_to_record(i) for i in items), path)


def _dedupe_points(coords: Sequence[Sequence[float]]) -> Tuple[Tuple[float, float], ...]:
    points: List[Tuple[float, float]] = []
    for c in coords:
        point = (float(c[0]), float(c[1]))
        if not all(math.isfinite(v) for v in point):
            raise ValueError("non-finite coordinate")
        if not points or points[-1] != point:
            points.append(point)
    return tuple(points)


def read_segments(path: PathLike, city: str = "", report: Optional[ReadReport] = None) -> List[StreetSegment]:
    """
    Read street segments from a GeoJSON FeatureCollection of LineStrings.

    Args:
        path: GeoJSON file; every feature carries `properties.id`
        city: City name stamped on segments that lack a `city` property
        report: Filled with per-feature counts

    Returns:
        Segments in file order; non-LineString or zero-length features skipped
    """
    report = report if report is not None else ReadReport()
    report.path = str(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            collection = json.load(f)
    except (OSError, ValueError) as e:
        raise IngestError(f"cannot read segments from {path}: {e}") from e
    if not isinstance(collection, Mapping) or collection.get("type") != "FeatureCollection":
        raise IngestError(f"{path} is not a GeoJSON FeatureCollection")
    features = collection.get("features") or []
    if not isinstance(features, list):
        raise IngestError(f"{path}: 'features' is not a list")

    segments: List[StreetSegment] = []
    seen_ids = set()
    for n, feature in enumerate(features):
        report.lines += 1
        if not isinstance(feature, Mapping):
            report.reject("feature is not an object", n)
            continue
        geometry = feature.get("geometry")
        geometry = geometry if isinstance(geometry, Mapping) else {}
        props = feature.get("properties")
        props = props if isinstance(props, Mapping) else {}
        seg_id = props.get("id", feature.get("id"))
        if geometry.get("type") != "LineString":
            report.reject(f"geometry type {geometry.get('type')}", n)
            continue
        if seg_id is None or str(seg_id) in seen_ids:
            report.reject("missing or duplicate id", n)
            continue
        try:
            points = _dedupe_points(geometry.get("coordinates", []))
        except (TypeError, ValueError, IndexError) as e:
            report.reject(str(e), n)
            continue
        if len(points) < 2:
            report.reject("degenerate polyline", n)
            continue
        seen_ids.add(str(seg_id))
        segments.append(StreetSegment(str(seg_id), points, str(props.get("city", city))))
        report.parsed += 1
    report.log("segments")
    return segments


def segment_feature(segment: StreetSegment, properties: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    props = {"id": segment.id}
    if segment.city:
        props["city"] = segment.city
    props.update(properties or {})
    return {
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": [list(p) for p in segment.polyline]},
        "properties": props,
    }


def write_segments(segments: Sequence[StreetSegment], path: PathLike) -> Path:
    return write_json(
        {"type": "FeatureCollection", "features": [segment_feature(s) for s in segments]},
        path,
    )


def _cell(value: str) -> Optional[str]:
    value = value.strip()
    return value or None


def read_air_quality(
    path: PathLike,
    report: Optional[ReadReport] = None,
    band_table: Optional[Mapping[str, Sequence[float]]] = None,
) -> Tuple[List[StationReading], List[SegmentPollution]]:
    """
    Read station AQI readings and per-segment predicted concentrations.

    Rows with a location are station readings; rows without are segment
    pollution values (concentration required). A station row without an aqi
    is banded from its concentration when a band table is given.

    Args:
        path: CSV `station_or_segment_id,lat,lon,pollutant,aqi,concentration`
        report: Filled with per-row counts
        band_table: AQI upper bounds per pollutant code

    Returns:
        (station readings, segment pollution values)
    """
    report = report if report is not None else ReadReport()
    report.path = str(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (OSError, ValueError) as e:
        raise IngestError(f"cannot read air quality from {path}: {e}") from e
    missing = [c for c in AIR_QUALITY_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestError(f"{path}: missing columns {missing}")

    stations: List[StationReading] = []
    pollution: List[SegmentPollution] = []
    for row_no, row in enumerate(frame[AIR_QUALITY_COLUMNS].itertuples(index=False), start=2):
        report.lines += 1
        ident, lat, lon, pollutant, aqi, conc = (_cell(v) for v in row)
        try:
            if lat is not None or lon is not None:
                stations.append(
                    StationReading(
                        station_id=ident or "",
                        lat=float(lat),
                        lon=float(lon),
                        pollutant=pollutant,
                        aqi=int(aqi) if aqi is not None or band_table is None
                        else compute_aqi(Pollutant(pollutant), float(conc), band_table),
                        concentration=float(conc) if conc is not None else None,
                    )
                )
            else:
                pollution.append(
                    SegmentPollution(segment_id=ident or "", pollutant=pollutant, concentration=float(conc))
                )
        except (ValueError, TypeError) as e:
            report.reject(str(e).splitlines()[0], row_no)
            continue
        report.parsed += 1
    report.log("air quality rows")
    return stations, pollution


def write_air_quality(
    stations: Sequence[StationReading], pollution: Sequence[SegmentPollution], path: PathLike
) -> Path:
    rows = [
        (s.station_id, repr(s.lat), repr(s.lon), s.pollutant.value, str(s.aqi),
         "" if s.concentration is None else repr(s.concentration))
        for s in stations
    ]
    rows += [(p.segment_id, "", "", p.pollutant.value, "", repr(p.concentration)) for p in pollution]
    return write_csv(pd.DataFrame(rows, columns=AIR_QUALITY_COLUMNS), path)


def compute_aqi(pollutant: Pollutant, concentration: float, band_table: Mapping[str, Sequence[float]]) -> int:
    """
    Band a concentration on the 1..10+ air quality index scale.

    Args:
        pollutant: Pollutant whose bounds apply
        concentration: µg/m³, must be >= 0
        band_table: Strictly increasing upper bounds per pollutant code

    Returns:
        1-based band index; values above the last bound get len(bounds) + 1
    """
    if concentration < 0 or not math.isfinite(concentration):
        raise ValidationError(f"concentration must be a non-negative number, got {concentration}")
    key = Pollutant(pollutant).value
    if key not in band_table:
        raise ValidationError(f"no AQI bands configured for {key}")
    bounds = list(band_table[key])
    if not bounds or any(later <= earlier for earlier, later in zip(bounds, bounds[1:])):
        raise ValidationError(f"AQI bounds for {key} must be strictly increasing")
    return bisect_left(bounds, concentration) + 1


def pollution_by_segment(pollution: Sequence[SegmentPollution]) -> Dict[str, Dict[str, float]]:
    """pollutant code -> segment id -> concentration (last value wins)"""
    table: Dict[str, Dict[str, float]] = {}
    for p in pollution:
        table.setdefault(p.pollutant.value, {})[p.segment_id] = p.concentration
    return table
