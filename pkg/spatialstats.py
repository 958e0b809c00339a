"""
Spatially corrected correlation between street-level fields.

Pearson's r between two fields measured on street segments is tested against
a reduced (effective) sample size: distance-class correlograms of both fields
estimate the variance of r under spatial autocorrelation, and the t-test uses
n_eff - 2 degrees of freedom (Clifford-style modified t-test).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import special, stats
from scipy.spatial.distance import pdist

from geo import LocalProjection, assign_items, build_index
from ingest import GeoItem, StreetSegment
from profiles import SmellVector, segment_tags, smell_vectors
from utils import StatisticsError, ValidationError

logger = logging.getLogger("smellscape")

DISTANCE_CLASSES = 20
MIN_SEGMENTS = 10

REPORT_COLUMNS = ["category", "pollutant", "source", "r", "n", "n_eff", "t", "p", "note"]
SWEEP_COLUMNS = ["size", "category", "pollutant", "r", "n_eff", "segments", "note"]

Classes = Union[None, int, Sequence[float]]


@dataclass(frozen=True)
class SpatialField:
    """One value per segment plus the segment's projected midpoint"""

    segment_ids: Tuple[str, ...]
    values: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        if len(self.segment_ids) != len(set(self.segment_ids)):
            raise ValidationError("a spatial field holds one value per segment")
        if self.values.shape != (len(self.segment_ids),) or self.coords.shape != (len(self.segment_ids), 2):
            raise ValidationError("values and coords must align with segment ids")
        if not np.all(np.isfinite(self.coords)):
            raise ValidationError("segment locations must be finite")

    @classmethod
    def from_mapping(
        cls, values: Mapping[str, float], coords: Mapping[str, Tuple[float, float]]
    ) -> "SpatialField":
        ids = tuple(sorted(s for s in values if s in coords))
        return cls(
            ids,
            np.array([values[s] for s in ids], dtype=float),
            np.array([coords[s] for s in ids], dtype=float).reshape(len(ids), 2),
        )

    def subset(self, ids: Sequence[str]) -> "SpatialField":
        pos = {s: i for i, s in enumerate(self.segment_ids)}
        idx = [pos[s] for s in ids]
        return SpatialField(tuple(ids), self.values[idx], self.coords[idx])

    def __len__(self) -> int:
        return len(self.segment_ids)


@dataclass(frozen=True)
class Correlogram:
    bounds: np.ndarray
    rho: np.ndarray
    pairs: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.pairs == 0


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    n: int
    n_eff: float
    t: float
    p: float
    fallback: bool = False


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation; needs equal lengths >= 3 and non-constant inputs"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise StatisticsError(f"pearson needs at least 3 pairs, got {x.size}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise StatisticsError("pearson is undefined for a constant input")
    r = float(stats.pearsonr(x, y)[0])
    # exact linear relations come back a few ulps short of +-1
    if 1.0 - abs(r) < 1e-12:
        return math.copysign(1.0, r)
    return r


def distance_classes(coords: np.ndarray, n_classes: int = DISTANCE_CLASSES) -> np.ndarray:
    """Upper bounds of n equal-width classes over [0, max pairwise distance]"""
    if n_classes < 1:
        raise ValidationError(f"need at least one distance class, got {n_classes}")
    distances = pdist(np.asarray(coords, dtype=float))
    if distances.size == 0 or distances.max() == 0:
        raise StatisticsError("distance classes need at least two distinct locations")
    return np.linspace(0.0, distances.max(), n_classes + 1)[1:]


def _resolve_classes(coords: np.ndarray, classes: Classes) -> np.ndarray:
    if classes is None:
        return distance_classes(coords)
    if isinstance(classes, int):
        return distance_classes(coords, classes)
    bounds = np.asarray(classes, dtype=float)
    if bounds.size == 0 or np.any(np.diff(bounds) <= 0) or bounds[0] <= 0:
        raise ValidationError("distance class bounds must be positive and strictly increasing")
    return bounds


@dataclass(frozen=True)
class _PairClasses:
    """Unordered pairs (i < j, pdist order) with their distance class"""

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    bounds: np.ndarray

    @classmethod
    def build(cls, coords: np.ndarray, classes: Classes) -> "_PairClasses":
        bounds = _resolve_classes(coords, classes)
        distances = pdist(coords)
        k = np.searchsorted(bounds, distances, side="left")
        if np.any(k >= bounds.size):
            raise ValidationError(
                f"distance classes end at {bounds[-1]:.1f} m but pairs reach {distances.max():.1f} m"
            )
        i, j = np.triu_indices(coords.shape[0], 1)
        return cls(i, j, k, bounds)

    def correlogram(self, values: np.ndarray) -> Correlogram:
        if np.ptp(values) == 0:
            raise StatisticsError("autocorrelation is undefined for a constant field")
        z = (values - values.mean()) / values.std()
        size = self.bounds.size
        pairs = np.bincount(self.k, minlength=size)
        sums = np.bincount(self.k, weights=z[self.i] * z[self.j], minlength=size)
        rho = np.divide(sums, pairs, out=np.zeros(size), where=pairs > 0)
        return Correlogram(self.bounds, np.clip(rho, -1.0, 1.0), pairs)


def spatial_autocorr(field: SpatialField, classes: Classes = None) -> Correlogram:
    """
    Distance-class correlogram of a field.

    Per class, the mean product of population-standardized values over the
    unordered segment pairs whose distance falls in the class (clipped to
    [-1, 1]). Classes with no pairs have rho 0 and are flagged empty.

    Args:
        field: Values with segment locations
        classes: Class upper bounds, a class count, or None for the default
            equal-width classes

    Returns:
        Correlogram with bounds, per-class rho and pair counts
    """
    if len(field) < 2:
        raise StatisticsError("autocorrelation needs at least two segments")
    return _PairClasses.build(field.coords, classes).correlogram(field.values)


def _effective_test(r: float, n: int, pair_counts: np.ndarray, rho_x: np.ndarray, rho_y: np.ndarray) -> CorrelationResult:
    # ordered pairs per class are twice the unordered count; the zero-distance class adds n
    variance = (n + float(np.sum(2.0 * pair_counts * rho_x * rho_y))) / (n * n)
    fallback = variance <= 0
    if fallback:
        logger.warning(f"non-positive variance estimate for r ({variance:.3g}); using n_eff = n = {n}")
        n_eff = float(n)
    else:
        n_eff = min(max(1.0 + 1.0 / variance, 3.0), float(n))
    df = n_eff - 2.0
    if abs(r) >= 1.0:
        return CorrelationResult(r, n, n_eff, math.copysign(math.inf, r), 0.0, fallback)
    t = r * math.sqrt(df / (1.0 - r * r))
    p = float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return CorrelationResult(r, n, n_eff, t, min(max(p, 0.0), 1.0), fallback)


def corrected_correlation(x_field: SpatialField, y_field: SpatialField, classes: Classes = None) -> CorrelationResult:
    """
    Pearson correlation tested with a spatially reduced sample size.

    var(r) is estimated as (1/n^2) * sum_k N_k * rho_x(k) * rho_y(k) over the
    distance classes (N_k ordered pairs, plus the zero-distance class with
    N_0 = n and rho = 1); n_eff = 1 + 1/var(r) clipped to [3, n], and the
    two-sided p-value comes from Student's t with n_eff - 2 degrees of freedom.

    Args:
        x_field: First field
        y_field: Second field; only segments present in both are used
        classes: Distance classes shared by both correlograms

    Returns:
        CorrelationResult; `fallback` is set when var(r) <= 0 forced n_eff = n
    """
    ids = sorted(set(x_field.segment_ids) & set(y_field.segment_ids))
    n = len(ids)
    if n < MIN_SEGMENTS:
        raise StatisticsError(f"corrected correlation needs at least {MIN_SEGMENTS} shared segments, got {n}")
    x = x_field.subset(ids)
    y = y_field.subset(ids)
    r = pearson(x.values, y.values)
    pairs = _PairClasses.build(x.coords, classes)
    cx = pairs.correlogram(x.values)
    cy = pairs.correlogram(y.values)
    return _effective_test(r, n, cx.pairs, cx.rho, cy.rho)


def _category_fields(
    vectors: Sequence[SmellVector], categories: Sequence[str], coords: Mapping[str, Tuple[float, float]]
) -> Dict[str, SpatialField]:
    return {
        c: SpatialField.from_mapping({v.segment_id: v.fractions[c] for v in vectors}, coords) for c in categories
    }


def category_pollutant_report(
    vectors: Sequence[SmellVector],
    categories: Sequence[str],
    pollutants: Mapping[str, Mapping[str, float]],
    coords: Mapping[str, Tuple[float, float]],
    classes: Classes = DISTANCE_CLASSES,
    source: str = "all",
) -> pd.DataFrame:
    """
    Corrected correlation for every (category, pollutant) pair.

    Args:
        vectors: Smell vectors of the segments that passed min_tags
        categories: Categories to report, in order
        pollutants: Pollutant field name -> segment id -> value
        coords: Segment id -> projected midpoint
        classes: Distance classes per pair
        source: Label for the `source` column

    Returns:
        Frame with columns category, pollutant, source, r, n, n_eff, t, p, note;
        pairs that cannot be tested keep NaN statistics and a note
    """
    smell = _category_fields(vectors, categories, coords)
    rows = []
    for category in categories:
        for pollutant in sorted(pollutants):
            air = SpatialField.from_mapping(pollutants[pollutant], coords)
            n = len(set(smell[category].segment_ids) & set(air.segment_ids))
            row = {"category": category, "pollutant": pollutant, "source": source, "n": n}
            try:
                result = corrected_correlation(smell[category], air, classes)
            except (StatisticsError, ValidationError) as e:
                logger.warning(f"{source}: skipped {category} vs {pollutant}: {e}")
                row.update(r=np.nan, n_eff=np.nan, t=np.nan, p=np.nan, note=str(e))
            else:
                row.update(
                    r=result.r, n_eff=result.n_eff, t=result.t, p=result.p,
                    note="n_eff fallback" if result.fallback else "",
                )
            rows.append(row)
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


@dataclass(frozen=True)
class CrossCorrelation:
    r: pd.DataFrame
    p: pd.DataFrame
    undefined: Tuple[str, ...] = ()


def category_cross_correlation(
    vectors: Sequence[SmellVector],
    categories: Sequence[str],
    coords: Mapping[str, Tuple[float, float]],
    classes: Classes = DISTANCE_CLASSES,
) -> CrossCorrelation:
    """
    Corrected correlations between category fractions across segments.

    Returns:
        Symmetric K x K r and p matrices with unit diagonal; categories that
        are constant over the segments get NaN rows and columns
    """
    if len(vectors) < MIN_SEGMENTS:
        raise StatisticsError(f"cross-correlation needs at least {MIN_SEGMENTS} segments, got {len(vectors)}")
    fields = _category_fields(vectors, categories, coords)
    undefined = tuple(c for c in categories if len(fields[c]) < 2 or np.ptp(fields[c].values) == 0)
    r = pd.DataFrame(np.nan, index=list(categories), columns=list(categories))
    p = r.copy()
    defined = [c for c in categories if c not in undefined]
    for a_pos, a in enumerate(defined):
        r.loc[a, a], p.loc[a, a] = 1.0, 0.0
        for b in defined[a_pos + 1:]:
            result = corrected_correlation(fields[a], fields[b], classes)
            r.loc[a, b] = r.loc[b, a] = result.r
            p.loc[a, b] = p.loc[b, a] = result.p
    if undefined:
        logger.warning(f"categories constant over all segments, left undefined: {list(undefined)}")
    r.index.name = p.index.name = "category"
    return CrossCorrelation(r, p, undefined)


@dataclass
class SweepInputs:
    """Everything one buffer size needs to go from items to corrected correlations"""

    segments: Sequence[StreetSegment]
    projection: LocalProjection
    items: Sequence[GeoItem]
    matches: Mapping[str, Sequence[str]]
    word_to_category: Mapping[str, str]
    categories: Sequence[str]
    pollutants: Mapping[str, Mapping[str, float]]
    min_tags: int = 30
    classes: Classes = DISTANCE_CLASSES
    nearest_only: bool = False
    include_uncategorized: bool = False
    coords: Dict[str, Tuple[float, float]] = field(default_factory=dict)


def check_sizes(sizes: Sequence[float]) -> List[float]:
    sizes = [float(s) for s in sizes]
    if not sizes:
        raise ValidationError("buffer sweep needs at least one size")
    if any(s <= 0 for s in sizes):
        raise ValidationError(f"buffer sizes must be positive: {sizes}")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValidationError(f"buffer sizes must be strictly increasing: {sizes}")
    return sizes


def buffer_sweep(
    inputs: SweepInputs, sizes: Sequence[float], pairs: Sequence[Tuple[str, str]]
) -> pd.DataFrame:
    """
    Re-run assignment, profiling and correlation for each buffer size.

    Args:
        inputs: Segments, items, matches, taxonomy and pollutant fields
        sizes: Strictly increasing buffer widths in meters
        pairs: (category, pollutant) pairs to report

    Returns:
        Frame with columns size, category, pollutant, r, n_eff, segments, note;
        sizes leaving fewer than 10 eligible segments are flagged in `note`
    """
    sizes = check_sizes(sizes)
    rows = []
    for size in sizes:
        index = build_index(inputs.segments, size, inputs.projection)
        coords = inputs.coords or {s.id: s.midpoint for s in index.segments}
        assignment = assign_items(inputs.items, index, nearest_only=inputs.nearest_only)
        tags = segment_tags(assignment.by_segment, inputs.matches)
        vectors = smell_vectors(
            tags, inputs.word_to_category, inputs.categories, inputs.min_tags, inputs.include_uncategorized
        )
        for category, pollutant in pairs:
            row = {"size": size, "category": category, "pollutant": pollutant, "segments": len(vectors)}
            if category not in inputs.categories or pollutant not in inputs.pollutants:
                raise ValidationError(f"unknown sweep pair ({category}, {pollutant})")
            if len(vectors) < MIN_SEGMENTS:
                row.update(r=np.nan, n_eff=np.nan, note=f"only {len(vectors)} eligible segments")
                rows.append(row)
                continue
            smell = SpatialField.from_mapping({v.segment_id: v.fractions[category] for v in vectors}, coords)
            air = SpatialField.from_mapping(inputs.pollutants[pollutant], coords)
            try:
                result = corrected_correlation(smell, air, inputs.classes)
            except (StatisticsError, ValidationError) as e:
                row.update(r=np.nan, n_eff=np.nan, note=str(e))
            else:
                row.update(r=result.r, n_eff=result.n_eff, note="n_eff fallback" if result.fallback else "")
            rows.append(row)
        logger.info(f"Buffer {size} m: {len(vectors)} segments with smell vectors")
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
