"""
End-to-end tests on the synthetic city: stage outputs against the planted ground truth
"""

import json
import shutil

import numpy as np
import pandas as pd
import pytest

from config import load_config
from pipeline import RUN_ORDER, run_pipeline, run_stage
from smellscape import main
from synth import generate_synthetic_city
from utils import ConfigError, StageError, ValidationError, ensure_dir, file_digest, read_json


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    return generate_synthetic_city(seed=0, out_dir=tmp_path_factory.mktemp("city"))


@pytest.fixture(scope="module")
def run(city, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    config = load_config(city["config"], {"output_dir": str(out)})
    manifest = run_pipeline(config, RUN_ORDER + ["sweep"])
    return config, manifest


def correlation(config, category, pollutant, source="all"):
    frame = pd.read_csv(config.output("correlations.csv"), keep_default_na=False, na_values=[""])
    row = frame[(frame.category == category) & (frame.pollutant == pollutant) & (frame.source == source)]
    assert len(row) == 1
    return row.iloc[0]


@pytest.mark.slow
def test_manifest_lists_every_output(run):
    config, manifest = run
    assert set(manifest["stages"]) == set(RUN_ORDER) | {"sweep"}
    for name in ["lexicon.csv", "taxonomy.json", "smell_vectors.csv", "correlations.csv", "buffer_sweep.csv",
                 "base_notes.txt", "dataset_summary.csv", "heatmaps/heatmap_nature.geojson"]:
        assert name in manifest["outputs"]
        assert manifest["outputs"][name] == file_digest(config.output(name))
    assert manifest["stages"]["lexicon"]["blocklisted"] == ["orange"]


@pytest.mark.slow
def test_taxonomy_recovers_planted_categories(run, city):
    config, manifest = run
    truth = read_json(city["ground_truth"])
    taxonomy = read_json(config.output("taxonomy.json"))
    found = {node["label"]: sorted(node["members"]) for node in taxonomy["children"]}
    assert found == truth["categories"]


@pytest.mark.slow
def test_emissions_follow_no2(run):
    config, _ = run
    row = correlation(config, "emissions", "NO2")
    assert row.r >= 0.3
    assert row.p < 0.01
    assert row.n_eff <= row.n


@pytest.mark.slow
def test_nature_avoids_no2(run):
    config, _ = run
    row = correlation(config, "nature", "NO2")
    assert row.r <= -0.3
    assert row.p < 0.01


@pytest.mark.slow
def test_base_notes_match_planted_city(run, city):
    config, _ = run
    truth = read_json(city["ground_truth"])["city_distribution"]
    notes = pd.read_csv(config.output("base_notes.csv"))
    assert dict(zip(notes.category, notes.fraction)) == pytest.approx(truth, abs=1e-12)
    expected_order = [c for c, _ in sorted(truth.items(), key=lambda kv: (-kv[1], kv[0]))]
    assert notes.sort_values("rank").category.tolist() == expected_order


@pytest.mark.slow
def test_nature_hot_spots_lie_in_the_park(run, city):
    config, _ = run
    zones = {s: v["zone"] for s, v in read_json(city["ground_truth"])["segments"].items()}
    heatmap = read_json(config.output("heatmaps/heatmap_nature.geojson"))
    z = {f["properties"]["segment_id"]: f["properties"]["zscore"] for f in heatmap["features"]}
    cut = np.quantile(list(z.values()), 0.9)
    hot = [s for s, v in z.items() if v >= cut]
    assert sum(zones[s] == "park" for s in hot) / len(hot) >= 0.8
    assert {f["properties"]["category_or_pollutant"] for f in heatmap["features"]} == {"nature"}


@pytest.mark.slow
def test_street_level_signal_fades_with_wide_buffers(run):
    config, _ = run
    sweep = pd.read_csv(config.output("buffer_sweep.csv"), keep_default_na=False, na_values=[""])
    rows = sweep[(sweep.category == "emissions") & (sweep.pollutant == "NO2")].set_index("size")
    assert sorted(rows.index) == [10.0, 25.0, 50.0, 100.0]
    assert abs(rows.loc[25.0, "r"]) >= abs(rows.loc[100.0, "r"])


@pytest.mark.slow
def test_dataset_summary(run):
    config, manifest = run
    summary = pd.read_csv(config.output("dataset_summary.csv")).set_index("source")
    assert sorted(summary.index) == ["flickr", "instagram", "twitter"]
    assert summary["items"].sum() == manifest["stages"]["match"]["items"]
    assert (summary["segments"] > 0).all()


@pytest.mark.slow
def test_retweets_are_dropped(run):
    config, manifest = run
    twitter = manifest["stages"]["match"]["sources"]["twitter"]
    assert twitter["filtered"].get("retweet", 0) > 0
    assert twitter["lines"] == twitter["parsed"] + twitter["invalid"] + sum(twitter["filtered"].values())


@pytest.mark.slow
def test_reruns_are_byte_identical(city, run, tmp_path):
    config, manifest = run
    ensure_dir(tmp_path / "heatmaps")
    (tmp_path / "heatmaps" / "heatmap_gone.geojson").write_text("{}", encoding="utf-8")
    (tmp_path / "smell_vectors_gone.csv").write_text("segment_id\n", encoding="utf-8")
    again = run_pipeline(load_config(city["config"], {"output_dir": str(tmp_path)}), RUN_ORDER + ["sweep"])
    assert again["outputs"] == manifest["outputs"]
    assert (tmp_path / "manifest.json").read_bytes() == config.output("manifest.json").read_bytes()


def test_missing_lexicon_stops_before_any_stage(tmp_path):
    paths = generate_synthetic_city({"grid_x": 4, "grid_y": 4}, seed=1, out_dir=tmp_path / "city")
    paths["lexicon"].unlink()
    config = load_config(paths["config"], {"output_dir": str(tmp_path / "out")})
    with pytest.raises(ConfigError, match="lexicon"):
        run_pipeline(config)
    assert not (tmp_path / "out" / "manifest.json").exists()


def test_manifest_skips_files_from_earlier_runs(tmp_path):
    paths = generate_synthetic_city({"grid_x": 4, "grid_y": 4}, seed=1, out_dir=tmp_path / "city")
    out = tmp_path / "out"
    ensure_dir(out / "heatmaps")
    (out / "heatmaps" / "heatmap_gone.geojson").write_text("{}", encoding="utf-8")
    (out / "smell_vectors_gone.csv").write_text("segment_id\n", encoding="utf-8")
    manifest = run_pipeline(load_config(paths["config"], {"output_dir": str(out)}), ["lexicon"])
    assert manifest["outputs"] == {"lexicon.csv": file_digest(out / "lexicon.csv")}
    assert manifest["stages"]["lexicon"]["outputs"] == ["lexicon.csv"]


def test_stage_errors_name_the_stage(tmp_path):
    paths = generate_synthetic_city({"grid_x": 4, "grid_y": 4}, seed=1, out_dir=tmp_path / "city")
    config = load_config(paths["config"], {"output_dir": str(tmp_path / "out")})
    with pytest.raises(StageError) as error:
        run_stage("classify", config)
    assert error.value.stage == "classify"
    with pytest.raises(StageError):
        run_stage("nonsense", config)


def test_synthetic_city_is_deterministic(tmp_path):
    spec = {"grid_x": 5, "grid_y": 5}
    first = generate_synthetic_city(spec, seed=3, out_dir=tmp_path / "a")
    second = generate_synthetic_city(spec, seed=3, out_dir=tmp_path / "b")
    assert {k: file_digest(p) for k, p in first.items()} == {k: file_digest(p) for k, p in second.items()}


def test_synthetic_city_without_items(tmp_path):
    paths = generate_synthetic_city({"grid_x": 3, "grid_y": 3, "items_per_segment": 0}, out_dir=tmp_path)
    assert paths["items_flickr"].read_text(encoding="utf-8") == ""
    segments = read_json(paths["segments"])
    assert len(segments["features"]) == 12


def test_synthetic_city_rejects_negative_rates(tmp_path):
    with pytest.raises(ValidationError):
        generate_synthetic_city({"items_per_segment": -1}, out_dir=tmp_path)


def test_cli_exit_codes(tmp_path, capsys):
    city_dir = tmp_path / "city"
    assert main(["synth", "--out", str(city_dir), "--seed", "2", "--spec", str(spec_file(tmp_path))]) == 0
    config = str(city_dir / "pipeline.json")
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 1
    assert main(["sweep", "--config", config, "--sizes", "25", "10"]) == 1
    assert main(["classify", "--config", config, "--output-dir", str(tmp_path / "empty")]) == 2
    assert main(["lexicon", "--config", config, "--output-dir", str(tmp_path / "out")]) == 0
    counts = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert counts["blocklisted"] == ["orange"]


def spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"grid_x": 4, "grid_y": 4}), encoding="utf-8")
    return path


def test_cli_combines_annotator_lists(tmp_path, capsys):
    lists = []
    for i, words in enumerate([["smoke", "grass", "orange"], ["Smoke", "grass", "orange", "fumes"],
                               ["smoke,", "orange", "grass"]]):
        path = tmp_path / f"annotator{i}.txt"
        path.write_text("\n".join(words) + "\n", encoding="utf-8")
        lists.append(str(path))
    blocklist = tmp_path / "blocklist.txt"
    blocklist.write_text("orange\n", encoding="utf-8")
    out = tmp_path / "lexicon.csv"
    assert main(["lexicon", "--annotations", *lists, "--out", str(out), "--blocklist", str(blocklist)]) == 0
    frame = pd.read_csv(out)
    assert frame.term.tolist() == ["grass", "smoke"]
    assert main(["lexicon", "--annotations", *lists[:2], "--out", str(out)]) == 1


def test_copied_city_runs_from_another_directory(city, tmp_path):
    shutil.copytree(city["config"].parent, tmp_path / "moved", ignore=shutil.ignore_patterns("output"))
    config = load_config(tmp_path / "moved" / "pipeline.json")
    assert config.inputs.lexicon == tmp_path / "moved" / "lexicon.csv"
    assert config.output_dir == tmp_path / "moved" / "output"
