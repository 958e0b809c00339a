"""
Utility functions shared by the smellscape modules.

Logging setup, the exception hierarchy and deterministic writers for the
CSV/JSON artifacts every pipeline stage materializes to disk.
"""

import os
import sys
import json
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd

__version__ = "0.1.0"

logger = logging.getLogger("smellscape")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

PathLike = Union[str, Path]


class SmellscapeError(Exception):
    """Base class for all toolkit errors"""


class ValidationError(SmellscapeError, ValueError):
    """Invalid input data or arguments"""


class ConfigError(ValidationError):
    """Invalid or incomplete pipeline configuration"""


class StatisticsError(SmellscapeError, ValueError):
    """A statistic is undefined for the given data (zero variance, too few samples)"""


class ProjectionError(SmellscapeError, ValueError):
    """A point lies outside the validity extent of a local projection"""


class StageError(SmellscapeError):
    """A fatal error inside one pipeline stage"""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


def setup_logging(level: Optional[str] = None) -> None:
    """
    Configure the root handler once.

    Logs go to stderr so stdout stays free for command output. The level
    comes from the argument, then LOGGING_LEVEL, then INFO.
    """
    level_name = level or os.environ.get("LOGGING_LEVEL", "INFO")
    numeric_level = getattr(logging, level_name.upper(), logging.INFO)
    logging.basicConfig(
        level=numeric_level,
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )


def ensure_dir(path: PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(data: Any, path: PathLike) -> Path:
    """Write JSON with sorted keys and a trailing newline so reruns are byte-identical"""
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False)
        f.write("\n")
    return path


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_ndjson(records: Iterable[Dict[str, Any]], path: PathLike) -> int:
    """Write one compact JSON object per line, returning the record count"""
    path = Path(path)
    ensure_dir(path.parent)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":")))
            f.write("\n")
            count += 1
    return count


def write_csv(frame: pd.DataFrame, path: PathLike, index: bool = False) -> Path:
    """Write a data frame as UTF-8 CSV with unix line endings"""
    path = Path(path)
    ensure_dir(path.parent)
    frame.to_csv(path, index=index, lineterminator="\n", encoding="utf-8")
    return path


def write_rows(header: Sequence[str], rows: Iterable[Sequence[Any]], path: PathLike) -> Path:
    return write_csv(pd.DataFrame(list(rows), columns=list(header)), path)


def file_digest(path: PathLike) -> str:
    """SHA-256 hex digest of a file's bytes"""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def read_lines(path: PathLike) -> List[str]:
    """Non-empty, stripped lines of a UTF-8 text file"""
    with open(path, "r", encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]
