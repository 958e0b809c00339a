"""
Pipeline configuration: a validated model loaded from TOML or JSON.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import pydantic
from pydantic import BaseModel, ConfigDict, Field, field_validator

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from ingest import BBox, Source
from utils import ConfigError, PathLike

logger = logging.getLogger("smellscape")

DEFAULT_CONFIG_PATH = "config.toml"
OUTPUT_DIR_ENV = "SMELLSCAPE_OUTPUT_DIR"

# nine upper bounds per pollutant in µg/m³ give bands 1..9; anything above is "10+"
DEFAULT_AQI_BANDS: Dict[str, List[float]] = {
    "NO2": [67, 134, 200, 267, 334, 400, 467, 534, 600],
    "O3": [33, 66, 100, 120, 140, 160, 187, 213, 240],
    "SO2": [88, 177, 266, 354, 443, 532, 710, 887, 1064],
    "PM2.5": [11, 23, 35, 41, 47, 53, 58, 64, 70],
    "PM10": [16, 33, 50, 58, 66, 75, 83, 91, 100],
    "CO": [3800, 7700, 11500, 12300, 13000, 13400, 14000, 14800, 15400],
}

PATH_KEYS = ("segments", "air_quality", "lexicon", "blocklist", "merge_spec", "labels")


class InputPaths(BaseModel):
    model_config = ConfigDict(extra="forbid")

    items: Dict[Source, Path]
    segments: Path
    lexicon: Path
    air_quality: Optional[Path] = None
    blocklist: Optional[Path] = None
    merge_spec: Optional[Path] = None
    labels: Optional[Path] = None


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sizes: List[float] = [10.0, 25.0, 50.0, 100.0]
    pairs: List[Tuple[str, str]] = []


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    city: str = "city"
    bbox: BBox
    inputs: InputPaths
    languages: List[str] = []
    drop_retweets_replies: bool = True
    graph_sources: List[Source] = [Source.FLICKR]
    min_edge_weight: int = Field(1, ge=1)
    size_threshold: int = Field(30, ge=2)
    expected_categories: Optional[int] = Field(None, ge=1)
    buffer_width: float = Field(22.5, gt=0)
    nearest_only: bool = False
    station_max_distance: float = Field(500.0, gt=0)
    min_tags: int = Field(30, ge=1)
    include_uncategorized: bool = False
    distance_classes: int = Field(20, ge=1)
    aqi_bands: Dict[str, List[float]] = DEFAULT_AQI_BANDS
    sweep: SweepConfig = SweepConfig()
    seed: int = 0
    output_dir: Path = Path("output")

    @field_validator("aqi_bands")
    @classmethod
    def _increasing(cls, v: Dict[str, List[float]]) -> Dict[str, List[float]]:
        for pollutant, bounds in v.items():
            if not bounds or any(b <= a for a, b in zip(bounds, bounds[1:])):
                raise ValueError(f"AQI bounds for {pollutant} must be strictly increasing")
        return v

    def output(self, name: str) -> Path:
        return self.output_dir / name


def _read(path: Path) -> Dict[str, Any]:
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e


def _resolve(raw: Dict[str, Any], base: Path) -> Dict[str, Any]:
    """Make input and output paths relative to the config file's directory"""

    def fix(value: Any) -> Any:
        return str(base / value) if isinstance(value, str) and not Path(value).is_absolute() else value

    inputs = dict(raw.get("inputs") or {})
    if isinstance(inputs.get("items"), Mapping):
        inputs["items"] = {k: fix(v) for k, v in inputs["items"].items()}
    for key in PATH_KEYS:
        if key in inputs:
            inputs[key] = fix(inputs[key])
    resolved = dict(raw, inputs=inputs)
    if "output_dir" in raw:
        resolved["output_dir"] = fix(raw["output_dir"])
    else:
        resolved["output_dir"] = str(base / "output")
    return resolved


def load_config(path: Optional[PathLike] = None, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """
    Load and validate a pipeline config.

    Args:
        path: TOML or JSON file; defaults to $CONFIG_PATH
        overrides: Top-level keys set from the command line (None values ignored)

    Returns:
        PipelineConfig with paths resolved against the config directory; the
        SMELLSCAPE_OUTPUT_DIR environment variable replaces output_dir unless
        an override sets it

    Raises:
        ConfigError: unreadable file or invalid values
    """
    path = Path(path or os.getenv("CONFIG_PATH", DEFAULT_CONFIG_PATH))
    raw = _resolve(_read(path), path.parent)
    env_output = os.getenv(OUTPUT_DIR_ENV)
    if env_output:
        raw["output_dir"] = env_output
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    try:
        config = PipelineConfig.model_validate(raw)
    except pydantic.ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e
    logger.info(f"Loaded config for '{config.city}' from {path}")
    return config


def check_inputs(config: PipelineConfig) -> None:
    """All referenced input files must exist before a run starts"""
    inputs = config.inputs
    paths = {f"items.{s.value}": p for s, p in inputs.items.items()}
    paths.update({k: getattr(inputs, k) for k in PATH_KEYS if getattr(inputs, k) is not None})
    missing = sorted(f"{k} ({p})" for k, p in paths.items() if not Path(p).is_file())
    if missing:
        raise ConfigError(f"missing input files: {', '.join(missing)}")
    if not inputs.items:
        raise ConfigError("no item sources configured")
    unknown = sorted({s.value for s in config.graph_sources} - {s.value for s in inputs.items})
    if unknown:
        raise ConfigError(f"graph_sources {unknown} have no configured item file")
