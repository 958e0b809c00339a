"""
Stage orchestration.

Every stage reads its inputs from the config or from files earlier stages
wrote to the output directory, and writes its own outputs there, so any stage
can be re-run on its own. A fatal error inside a stage surfaces as a
StageError carrying the stage name.
"""

import json
import logging
from collections import Counter
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from cograph import count_cooccurrences, graph_stats, read_graph, write_graph
from community import (
    CategoryHierarchy,
    assign_categories,
    hierarchical_classify,
    merge_subcommunities,
    read_hierarchy,
    write_hierarchy,
)
from config import PipelineConfig, check_inputs
from geo import LocalProjection, SpatialIndex, assign_items, build_index, link_stations, read_assignments, write_assignments
from ingest import (
    GeoItem,
    ItemFilters,
    ReadReport,
    StreetSegment,
    pollution_by_segment,
    read_air_quality,
    read_items,
    read_segments,
    write_items,
)
from lexicon import load_blocklist, load_lexicon, write_lexicon
from profiles import city_distribution, read_vectors, segment_tags, smell_vectors, write_vectors
from reports import dataset_summary, mid_level_notes, write_base_notes, write_heatmaps
from spatialstats import SweepInputs, buffer_sweep, category_cross_correlation, category_pollutant_report, check_sizes
from utils import (
    StageError,
    StatisticsError,
    __version__,
    ensure_dir,
    file_digest,
    read_json,
    write_csv,
    write_json,
    write_ndjson,
)

logger = logging.getLogger("smellscape")

ARTIFACTS = {
    "lexicon": "lexicon.csv",
    "items": "items.ndjson",
    "matches": "matches.ndjson",
    "ingest": "ingest_report.json",
    "edges": "graph_edges.csv",
    "nodes": "graph_nodes.csv",
    "taxonomy": "taxonomy.json",
    "assignments": "assignments.csv",
    "vectors": "smell_vectors.csv",
    "base_notes_csv": "base_notes.csv",
    "base_notes_txt": "base_notes.txt",
    "mid_notes": "mid_level_notes.csv",
    "summary": "dataset_summary.csv",
    "correlations": "correlations.csv",
    "cross_r": "category_correlation.csv",
    "cross_p": "category_correlation_p.csv",
    "heatmaps": "heatmaps",
    "sweep": "buffer_sweep.csv",
    "manifest": "manifest.json",
}


def artifact(config: PipelineConfig, key: str) -> Path:
    return config.output(ARTIFACTS[key])


def _written(config: PipelineConfig, *paths: Path) -> List[str]:
    """Output-relative names of the files a stage wrote"""
    return sorted(Path(p).relative_to(config.output_dir).as_posix() for p in paths)


def source_vectors_path(config: PipelineConfig, source: str) -> Path:
    return config.output(f"smell_vectors_{source}.csv")


def read_matches(path: Path) -> Dict[str, Dict[str, Any]]:
    """item id -> {source, language, terms}"""
    matches = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            record = json.loads(line)
            matches[record["id"]] = record
    return matches


def _load_items(config: PipelineConfig, ids: Optional[set] = None) -> List[GeoItem]:
    items = read_items(artifact(config, "items"), filters=ItemFilters(drop_retweets_replies=False))
    return [i for i in items if ids is None or i.id in ids]


def _load_taxonomy(config: PipelineConfig) -> Tuple[CategoryHierarchy, List[str], Dict[str, str]]:
    hierarchy = read_hierarchy(artifact(config, "taxonomy"))
    return hierarchy, hierarchy.categories(), hierarchy.word_to_category()


def _load_segments(config: PipelineConfig) -> List[StreetSegment]:
    return read_segments(config.inputs.segments, city=config.city)


def _projection(config: PipelineConfig) -> LocalProjection:
    return LocalProjection.from_bbox(config.bbox)


def stage_lexicon(config: PipelineConfig) -> Dict[str, Any]:
    blocklist = load_blocklist(config.inputs.blocklist)
    lexicon = load_lexicon(config.inputs.lexicon, blocklist, config.languages)
    write_lexicon(lexicon.terms, artifact(config, "lexicon"))
    return {
        "terms": len(lexicon),
        "languages": lexicon.languages,
        "version": lexicon.version,
        "blocklisted": list(lexicon.blocklisted),
        "outputs": _written(config, artifact(config, "lexicon")),
    }


def stage_match(config: PipelineConfig) -> Dict[str, Any]:
    lexicon = load_lexicon(artifact(config, "lexicon"))
    matchers = lexicon.matchers()
    filters = ItemFilters(drop_retweets_replies=config.drop_retweets_replies, bbox=config.bbox)
    items: List[GeoItem] = []
    reports: Dict[str, Dict[str, Any]] = {}
    for source, path in sorted(config.inputs.items.items(), key=lambda kv: kv[0].value):
        report = ReadReport()
        items.extend(read_items(path, source=source, filters=filters, report=report))
        reports[source.value] = dict(report.as_dict(), path=Path(path).name)
    unique: Dict[str, GeoItem] = {}
    for item in items:
        unique.setdefault(item.id, item)
    if len(unique) < len(items):
        logger.warning(f"{len(items) - len(unique)} items share an id with another source file; keeping the first")
    items = list(unique.values())

    records = []
    unmatched_language = 0
    for item in items:
        matcher = matchers.get(item.language)
        if matcher is None:
            unmatched_language += 1
            continue
        terms = sorted(matcher.match(item.text))
        if terms:
            records.append({"id": item.id, "source": item.source.value, "language": item.language, "terms": terms})
    write_items(items, artifact(config, "items"))
    write_ndjson(records, artifact(config, "matches"))
    write_json(reports, artifact(config, "ingest"))
    return {
        "items": len(items),
        "matched_items": len(records),
        "matched_words": sum(len(r["terms"]) for r in records),
        "no_matcher_for_language": unmatched_language,
        "sources": reports,
        "outputs": _written(config, *(artifact(config, k) for k in ("items", "matches", "ingest"))),
    }


def stage_graph(config: PipelineConfig) -> Dict[str, Any]:
    sources = {s.value for s in config.graph_sources}
    matches = read_matches(artifact(config, "matches"))
    graph = count_cooccurrences(m["terms"] for _, m in sorted(matches.items()) if m["source"] in sources)
    write_graph(graph, artifact(config, "edges"), artifact(config, "nodes"))
    stats = graph_stats(graph)
    return {
        "sources": sorted(sources),
        "nodes": stats.nodes,
        "edges": stats.edges,
        "total_weight": stats.total_weight,
        "outputs": _written(config, artifact(config, "edges"), artifact(config, "nodes")),
    }


def stage_classify(config: PipelineConfig) -> Dict[str, Any]:
    graph = read_graph(artifact(config, "edges"), artifact(config, "nodes")).to_networkx(config.min_edge_weight)
    if graph.number_of_nodes() == 0:
        raise StatisticsError("the co-occurrence graph is empty; nothing to classify")
    hierarchy = hierarchical_classify(graph, size_threshold=config.size_threshold, seed=config.seed)
    if config.inputs.merge_spec is not None:
        hierarchy = merge_subcommunities(hierarchy, read_json(config.inputs.merge_spec))
    labels = read_json(config.inputs.labels) if config.inputs.labels is not None else {}
    hierarchy = assign_categories(hierarchy, labels, config.expected_categories)
    write_hierarchy(hierarchy, artifact(config, "taxonomy"))
    return {
        "categories": hierarchy.categories(),
        "unclustered": sum(1 for n in hierarchy.top_level if n.unclustered),
        "leaves": len(hierarchy.leaves()),
        "depth": hierarchy.depth,
        "outputs": _written(config, artifact(config, "taxonomy")),
    }


def stage_assign(config: PipelineConfig) -> Dict[str, Any]:
    matches = read_matches(artifact(config, "matches"))
    items = _load_items(config, set(matches))
    index = build_index(_load_segments(config), config.buffer_width, _projection(config))
    assignment = assign_items(items, index, nearest_only=config.nearest_only)
    write_assignments(assignment, artifact(config, "assignments"))
    return {
        "segments": len(index),
        "assigned_segments": len(assignment.by_segment),
        "pairs": len(assignment.pairs),
        "unassigned_items": len(assignment.unassigned),
        "outputs": _written(config, artifact(config, "assignments")),
    }


def _item_segments(by_segment: Mapping[str, Sequence[str]]) -> Dict[str, List[str]]:
    out: Dict[str, List[str]] = {}
    for seg_id, item_ids in by_segment.items():
        for item_id in item_ids:
            out.setdefault(item_id, []).append(seg_id)
    return out


def stage_profile(config: PipelineConfig) -> Dict[str, Any]:
    _, categories, word_to_category = _load_taxonomy(config)
    matches = read_matches(artifact(config, "matches"))
    assignment = read_assignments(artifact(config, "assignments"))
    terms = {i: m["terms"] for i, m in matches.items()}

    def vectors_for(source: Optional[str]):
        subset = terms if source is None else {i: t for i, t in terms.items() if matches[i]["source"] == source}
        tags = segment_tags(assignment.by_segment, subset)
        return smell_vectors(tags, word_to_category, categories, config.min_tags, config.include_uncategorized)

    vectors = vectors_for(None)
    write_vectors(vectors, categories, artifact(config, "vectors"))
    per_source = {}
    for source in sorted(s.value for s in config.inputs.items):
        source_vectors = vectors_for(source)
        write_vectors(source_vectors, categories, source_vectors_path(config, source))
        per_source[source] = len(source_vectors)

    city_tags = Counter(w for t in terms.values() for w in t)
    distribution = city_distribution(city_tags, word_to_category, categories)
    write_base_notes(distribution, artifact(config, "base_notes_csv"), artifact(config, "base_notes_txt"))
    write_csv(mid_level_notes(vectors, categories), artifact(config, "mid_notes"))

    items = _load_items(config)
    by_source: Dict[str, List[GeoItem]] = {}
    for item in items:
        by_source.setdefault(item.source.value, []).append(item)
    summary = dataset_summary(by_source, terms, _item_segments(assignment.by_segment))
    write_csv(summary, artifact(config, "summary"))
    return {
        "segments_with_vectors": len(vectors),
        "segments_with_vectors_by_source": per_source,
        "categorized_tags": distribution.tag_count,
        "base_notes": [c for c, _ in distribution.ranked()],
        "outputs": _written(
            config,
            *(artifact(config, k) for k in ("vectors", "base_notes_csv", "base_notes_txt", "mid_notes", "summary")),
            *(source_vectors_path(config, s) for s in per_source),
        ),
    }


def pollutant_fields(config: PipelineConfig, index: SpatialIndex) -> Dict[str, Dict[str, float]]:
    """
    Segment-level pollutant layers: predicted concentrations under the
    pollutant code and nearest-station AQI under `<code>_aqi`.
    """
    if config.inputs.air_quality is None:
        return {}
    stations, pollution = read_air_quality(config.inputs.air_quality, band_table=config.aqi_bands)
    known = {s.id for s in index.segments}
    fields = {
        code: {seg: v for seg, v in values.items() if seg in known}
        for code, values in pollution_by_segment(pollution).items()
    }
    if stations:
        links = link_stations(index, stations, config.station_max_distance)
        readings: Dict[Tuple[str, str], List[int]] = {}
        for s in stations:
            readings.setdefault((s.station_id, s.pollutant.value), []).append(s.aqi)
        for code in sorted({p for _, p in readings}):
            layer = {
                seg: sum(readings[(st, code)]) / len(readings[(st, code)])
                for seg, st in links.items()
                if (st, code) in readings
            }
            if layer:
                fields[f"{code}_aqi"] = layer
    return {code: layer for code, layer in sorted(fields.items()) if layer}


def stage_correlate(config: PipelineConfig) -> Dict[str, Any]:
    index = build_index(_load_segments(config), config.buffer_width, _projection(config))
    coords = {s.id: s.midpoint for s in index.segments}
    fields = pollutant_fields(config, index)
    categories, vectors = read_vectors(artifact(config, "vectors"))
    frames = [category_pollutant_report(vectors, categories, fields, coords, config.distance_classes, "all")]
    for source in sorted(s.value for s in config.inputs.items):
        _, source_vectors = read_vectors(source_vectors_path(config, source))
        frames.append(
            category_pollutant_report(source_vectors, categories, fields, coords, config.distance_classes, source)
        )
    report = pd.concat(frames, ignore_index=True)
    write_csv(report, artifact(config, "correlations"))
    counts: Dict[str, Any] = {
        "pollutant_layers": sorted(fields),
        "tested_pairs": int(report["r"].notna().sum()),
        "outputs": _written(config, artifact(config, "correlations")),
    }
    try:
        cross = category_cross_correlation(vectors, categories, coords, config.distance_classes)
    except StatisticsError as e:
        logger.warning(f"category cross-correlation skipped: {e}")
        counts["cross_correlation"] = str(e)
    else:
        write_csv(cross.r, artifact(config, "cross_r"), index=True)
        write_csv(cross.p, artifact(config, "cross_p"), index=True)
        counts["undefined_categories"] = list(cross.undefined)
        counts["outputs"] = _written(config, *(artifact(config, k) for k in ("correlations", "cross_r", "cross_p")))
    return counts


def stage_heatmap(config: PipelineConfig) -> Dict[str, Any]:
    segments = _load_segments(config)
    index = build_index(segments, config.buffer_width, _projection(config))
    categories, vectors = read_vectors(artifact(config, "vectors"))
    layers = {c: {v.segment_id: v.fractions[c] for v in vectors} for c in categories}
    for code, layer in pollutant_fields(config, index).items():
        layers[code] = layer
    written = write_heatmaps(layers, {s.id: s for s in segments}, ensure_dir(artifact(config, "heatmaps")))
    return {
        "layers": sorted(written),
        "omitted": sorted(set(layers) - set(written)),
        "outputs": _written(config, *written.values()),
    }


def stage_sweep(config: PipelineConfig) -> Dict[str, Any]:
    sizes = check_sizes(config.sweep.sizes)
    _, categories, word_to_category = _load_taxonomy(config)
    matches = read_matches(artifact(config, "matches"))
    segments = _load_segments(config)
    projection = _projection(config)
    index = build_index(segments, config.buffer_width, projection)
    fields = pollutant_fields(config, index)
    pairs = [tuple(p) for p in config.sweep.pairs] or [
        (c, p) for c in categories for p in sorted(fields) if not p.endswith("_aqi")
    ]
    inputs = SweepInputs(
        segments=segments,
        projection=projection,
        items=_load_items(config, set(matches)),
        matches={i: m["terms"] for i, m in matches.items()},
        word_to_category=word_to_category,
        categories=categories,
        pollutants=fields,
        min_tags=config.min_tags,
        classes=config.distance_classes,
        nearest_only=config.nearest_only,
        include_uncategorized=config.include_uncategorized,
        coords={s.id: s.midpoint for s in index.segments},
    )
    frame = buffer_sweep(inputs, sizes, pairs)
    write_csv(frame, artifact(config, "sweep"))
    return {
        "sizes": sizes,
        "pairs": [list(p) for p in pairs],
        "flagged_rows": int((frame["note"] != "").sum()),
        "outputs": _written(config, artifact(config, "sweep")),
    }


STAGES: Dict[str, Callable[[PipelineConfig], Dict[str, Any]]] = {
    "lexicon": stage_lexicon,
    "match": stage_match,
    "graph": stage_graph,
    "classify": stage_classify,
    "assign": stage_assign,
    "profile": stage_profile,
    "correlate": stage_correlate,
    "heatmap": stage_heatmap,
    "sweep": stage_sweep,
}

RUN_ORDER = ["lexicon", "match", "graph", "classify", "assign", "profile", "correlate", "heatmap"]


def run_stage(name: str, config: PipelineConfig) -> Dict[str, Any]:
    """
    Run one stage against the config's output directory.

    Raises:
        StageError: anything the stage raised, with the stage name attached
    """
    if name not in STAGES:
        raise StageError(name, KeyError(f"unknown stage, choose from {sorted(STAGES)}"))
    ensure_dir(config.output_dir)
    logger.info(f"Stage {name}: starting")
    try:
        counts = STAGES[name](config)
    except StageError:
        raise
    except Exception as e:
        logger.error(f"Stage {name} failed: {e}")
        raise StageError(name, e) from e
    logger.info(f"Stage {name}: done {counts}")
    return counts


def output_digests(config: PipelineConfig, results: Mapping[str, Mapping[str, Any]]) -> Dict[str, str]:
    """SHA-256 per file the given stage results report; files left by earlier runs are not listed"""
    names = sorted({name for counts in results.values() for name in counts.get("outputs", [])})
    return {name: file_digest(config.output_dir / name) for name in names}


def run_pipeline(config: PipelineConfig, stages: Sequence[str] = RUN_ORDER) -> Dict[str, Any]:
    """
    Run the stages in order and write the run manifest.

    The manifest records the package and lexicon versions, the seed, per-stage
    counts and a SHA-256 digest per output file; it carries no timestamps so
    identical inputs and seed reproduce it byte for byte.

    Raises:
        ConfigError: missing inputs, before any stage runs
        StageError: the first failing stage
    """
    check_inputs(config)
    ensure_dir(config.output_dir)
    results = {}
    for name in stages:
        results[name] = run_stage(name, config)
    manifest = {
        "city": config.city,
        "seed": config.seed,
        "versions": {"smellscape": __version__, "lexicon": results.get("lexicon", {}).get("version")},
        "config": json.loads(config.model_dump_json(exclude={"output_dir", "inputs"})),
        "stages": results,
        "outputs": output_digests(config, results),
    }
    write_json(manifest, artifact(config, "manifest"))
    logger.info(f"Run complete: {len(manifest['outputs'])} outputs in {config.output_dir}")
    return manifest
