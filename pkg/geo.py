"""
Planar geometry for street segments: local projection, buffered polylines,
an R-tree over buffer envelopes, and item/station to segment assignment.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from rtree import index as rtree_index
from shapely.geometry import LineString, Point

from ingest import BBox, GeoItem, StationReading, StreetSegment
from utils import PathLike, ProjectionError, ValidationError, write_csv

logger = logging.getLogger("smellscape")

EARTH_RADIUS_M = 6_371_000.0
MAX_EXTENT_M = 150_000.0
ASSIGNMENT_COLUMNS = ["segment_id", "item_id"]

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class LocalProjection:
    """
    Equirectangular projection around a city origin.

    y = (lat - lat0) * K, x = (lon - lon0) * K * cos(lat0), K = pi/180 * R.
    Valid within `max_extent` meters of the origin.
    """

    origin_lat: float
    origin_lon: float
    radius: float = EARTH_RADIUS_M
    max_extent: float = MAX_EXTENT_M

    def __post_init__(self):
        if not -90 < self.origin_lat < 90:
            raise ProjectionError(f"origin latitude {self.origin_lat} cannot anchor a local projection")

    @classmethod
    def from_bbox(cls, bbox: BBox) -> "LocalProjection":
        lat, lon = bbox.centroid
        return cls(lat, lon)

    @property
    def meters_per_degree(self) -> float:
        return math.pi / 180.0 * self.radius

    @property
    def lon_scale(self) -> float:
        return self.meters_per_degree * math.cos(math.radians(self.origin_lat))

    def project(self, lat: ArrayLike, lon: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
        """WGS84 degrees to (x, y) meters; raises ProjectionError outside the extent"""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        x = (lon - self.origin_lon) * self.lon_scale
        y = (lat - self.origin_lat) * self.meters_per_degree
        too_far = np.hypot(x, y) > self.max_extent
        if np.any(too_far) or not np.all(np.isfinite(x) & np.isfinite(y)):
            raise ProjectionError(
                f"{int(np.count_nonzero(too_far))} points lie beyond {self.max_extent / 1000:.0f} km of "
                f"({self.origin_lat}, {self.origin_lon})"
            )
        return x, y

    def unproject(self, x: ArrayLike, y: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
        """(x, y) meters back to (lat, lon) degrees"""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.origin_lat + y / self.meters_per_degree, self.origin_lon + x / self.lon_scale

    def project_point(self, lat: float, lon: float) -> Tuple[float, float]:
        x, y = self.project(lat, lon)
        return float(x), float(y)

    def project_line(self, polyline: Sequence[Tuple[float, float]]) -> LineString:
        """Project a (lon, lat) polyline"""
        lons, lats = zip(*polyline)
        x, y = self.project(lats, lons)
        return LineString(np.column_stack([x, y]))


def point_segment_distance(point: Tuple[float, float], polyline: Union[LineString, Sequence[Tuple[float, float]]]) -> float:
    """Minimum Euclidean distance from a projected point to a projected polyline"""
    if not isinstance(polyline, LineString):
        if len(polyline) < 2:
            raise ValidationError("polyline needs at least two points")
        polyline = LineString(polyline)
    if len(polyline.coords) < 2:
        raise ValidationError("polyline needs at least two points")
    return float(polyline.distance(Point(point)))


@dataclass(frozen=True)
class BufferedSegment:
    id: str
    line: LineString
    buffer_width: float

    def __post_init__(self):
        if not self.buffer_width > 0:
            raise ValidationError(f"buffer width must be > 0, got {self.buffer_width}")

    @classmethod
    def from_segment(cls, segment: StreetSegment, projection: LocalProjection, buffer_width: float) -> "BufferedSegment":
        return cls(segment.id, projection.project_line(segment.polyline), buffer_width)

    @property
    def midpoint(self) -> Tuple[float, float]:
        mid = self.line.interpolate(0.5, normalized=True)
        return float(mid.x), float(mid.y)

    @property
    def envelope(self) -> Tuple[float, float, float, float]:
        minx, miny, maxx, maxy = self.line.bounds
        pad = self.buffer_width + 1e-6
        return minx - pad, miny - pad, maxx + pad, maxy + pad

    def distance(self, x: float, y: float) -> float:
        return float(self.line.distance(Point(x, y)))

    def contains(self, x: float, y: float) -> bool:
        return self.distance(x, y) <= self.buffer_width


@dataclass
class SpatialIndex:
    """
    R-tree over buffer envelopes with an exact distance filter.

    Envelope hits are a superset of the buffers containing a point; the
    distance check cuts them down to exactly that set.
    """

    projection: LocalProjection
    segments: List[BufferedSegment]
    _tree: rtree_index.Index = field(init=False, repr=False)

    def __post_init__(self):
        ids = [s.id for s in self.segments]
        if len(ids) != len(set(ids)):
            raise ValidationError("segment ids must be unique within an index")
        self._tree = rtree_index.Index()
        for i, segment in enumerate(self.segments):
            self._tree.insert(i, segment.envelope)

    @property
    def buffer_width(self) -> float:
        return self.segments[0].buffer_width if self.segments else 0.0

    def candidates(self, x: float, y: float) -> List[BufferedSegment]:
        return [self.segments[i] for i in self._tree.intersection((x, y, x, y))]

    def query(self, x: float, y: float) -> List[str]:
        """Ids of every segment whose buffer contains the projected point, sorted"""
        return sorted(s.id for s in self.candidates(x, y) if s.contains(x, y))

    def nearest(self, x: float, y: float) -> Optional[str]:
        """The containing segment closest to the point, lowest id on ties"""
        hits = [(s.distance(x, y), s.id) for s in self.candidates(x, y) if s.contains(x, y)]
        return min(hits)[1] if hits else None

    def __len__(self) -> int:
        return len(self.segments)


def build_index(
    segments: Iterable[StreetSegment], buffer_width: float, projection: LocalProjection
) -> SpatialIndex:
    """
    Buffer and index street segments.

    Args:
        segments: Street segments in WGS84
        buffer_width: Meters on each side of the polyline (> 0)
        projection: Local projection shared with the items

    Returns:
        SpatialIndex answering point-in-buffer queries exactly
    """
    buffered = [BufferedSegment.from_segment(s, projection, buffer_width) for s in segments]
    logger.info(f"Indexed {len(buffered)} segments with {buffer_width} m buffers")
    return SpatialIndex(projection, buffered)


@dataclass
class Assignment:
    by_segment: Dict[str, List[str]] = field(default_factory=dict)
    unassigned: List[str] = field(default_factory=list)

    @property
    def pairs(self) -> List[Tuple[str, str]]:
        return sorted((seg, item) for seg, items in self.by_segment.items() for item in items)


def assign_items(items: Iterable[GeoItem], index: SpatialIndex, nearest_only: bool = False) -> Assignment:
    """
    Attribute items to the segments whose buffers contain them.

    Args:
        items: Geo items, projected with the index's projection
        index: Spatial index over buffered segments
        nearest_only: Keep only the closest containing segment instead of all

    Returns:
        Assignment with sorted item ids per segment and sorted unassigned ids
    """
    by_segment: Dict[str, List[str]] = {}
    unassigned: List[str] = []
    for item in items:
        try:
            x, y = index.projection.project_point(item.lat, item.lon)
        except ProjectionError:
            logger.debug(f"item {item.id} lies outside the projection extent")
            unassigned.append(item.id)
            continue
        if nearest_only:
            nearest = index.nearest(x, y)
            hits = [nearest] if nearest is not None else []
        else:
            hits = index.query(x, y)
        if not hits:
            unassigned.append(item.id)
        for seg_id in hits:
            by_segment.setdefault(seg_id, []).append(item.id)
    assignment = Assignment(
        {seg: sorted(ids) for seg, ids in sorted(by_segment.items())},
        sorted(unassigned),
    )
    logger.info(
        f"Assigned {len(assignment.pairs)} item-segment pairs over {len(assignment.by_segment)} segments, "
        f"{len(assignment.unassigned)} items unassigned"
    )
    return assignment


def nearest_station(
    segment: BufferedSegment, stations: Mapping[str, Tuple[float, float]], max_distance: float
) -> Optional[str]:
    """
    Closest station to a segment's midpoint.

    Args:
        segment: Projected segment
        stations: Station id -> projected (x, y)
        max_distance: Largest accepted distance in meters

    Returns:
        Station id, lowest id on ties, or None when none is within max_distance
    """
    mx, my = segment.midpoint
    best: Optional[Tuple[float, str]] = None
    for station_id, (sx, sy) in stations.items():
        candidate = (math.hypot(sx - mx, sy - my), station_id)
        if best is None or candidate < best:
            best = candidate
    if best is None or best[0] > max_distance:
        return None
    return best[1]


def link_stations(
    index: SpatialIndex, readings: Sequence[StationReading], max_distance: float
) -> Dict[str, str]:
    """segment id -> nearest station id, for segments with a station in range"""
    stations: Dict[str, Tuple[float, float]] = {}
    for reading in readings:
        if reading.station_id in stations:
            continue
        try:
            stations[reading.station_id] = index.projection.project_point(reading.lat, reading.lon)
        except ProjectionError:
            logger.warning(f"station {reading.station_id} lies outside the projection extent")
    links = {}
    for segment in index.segments:
        station = nearest_station(segment, stations, max_distance)
        if station is not None:
            links[segment.id] = station
    logger.info(f"Linked {len(links)} of {len(index)} segments to {len(stations)} stations")
    return links


def segment_midpoints(index: SpatialIndex) -> Dict[str, Tuple[float, float]]:
    return {s.id: s.midpoint for s in index.segments}


def write_assignments(assignment: Assignment, path: PathLike) -> Path:
    return write_csv(pd.DataFrame(assignment.pairs, columns=ASSIGNMENT_COLUMNS), path)


def read_assignments(path: PathLike) -> Assignment:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    by_segment: Dict[str, List[str]] = {}
    for seg_id, item_id in frame[ASSIGNMENT_COLUMNS].itertuples(index=False):
        by_segment.setdefault(seg_id, []).append(item_id)
    return Assignment({seg: sorted(ids) for seg, ids in sorted(by_segment.items())})
