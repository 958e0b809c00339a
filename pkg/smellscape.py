#!/usr/bin/env python3
"""
smellscape command line

Maps urban smellscapes from geo-referenced social media: lexicon matching,
smell taxonomy by graph clustering, street-segment profiles and spatially
corrected correlation with air quality. Each subcommand runs one pipeline
stage from a config file; `run` runs them all.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from config import load_config
from lexicon import SmellTerm, intersect_annotations, load_annotations, load_blocklist, load_lexicon, write_lexicon
from pipeline import RUN_ORDER, run_pipeline, run_stage
from synth import generate_synthetic_city
from utils import StageError, ValidationError, __version__, setup_logging

logger = logging.getLogger("smellscape")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Pipeline config (TOML or JSON); defaults to $CONFIG_PATH")
    parser.add_argument("--output-dir", help="Output directory (overrides config and $SMELLSCAPE_OUTPUT_DIR)")
    parser.add_argument("--seed", type=int, help="Random seed for the clustering")
    parser.add_argument("--buffer-width", type=float, help="Street buffer in meters per side")
    parser.add_argument("--min-tags", type=int, help="Smallest tag count of a profiled segment")
    parser.add_argument("--size-threshold", type=int, help="Largest community left unsplit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smellscape", description="Urban smellscape mapping toolkit")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default $LOGGING_LEVEL or INFO)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    lexicon = sub.add_parser("lexicon", help="Validate the configured lexicon or combine annotator lists")
    _add_common(lexicon)
    lexicon.add_argument("--annotations", nargs="+", help="Annotator term lists (one term per line), at least 3")
    lexicon.add_argument("--language", default="en", help="Language code of the annotated terms")
    lexicon.add_argument("--out", help="Lexicon CSV to write when combining annotations")
    lexicon.add_argument("--blocklist", help="Blocklist applied to the combined lexicon")

    for name, text in [
        ("match", "Ingest items and match lexicon terms"),
        ("graph", "Build the co-occurrence graph"),
        ("classify", "Derive and label the smell taxonomy"),
        ("assign", "Attribute items to buffered street segments"),
        ("profile", "Smell vectors, base notes and dataset summary"),
        ("correlate", "Corrected smell/pollutant and category correlations"),
        ("heatmap", "Z-score GeoJSON layers per category and pollutant"),
    ]:
        _add_common(sub.add_parser(name, help=text))

    sweep = sub.add_parser("sweep", help="Buffer-size sensitivity of the correlations")
    _add_common(sweep)
    sweep.add_argument("--sizes", type=float, nargs="+", help="Strictly increasing buffer sizes in meters")

    synth = sub.add_parser("synth", help="Generate a synthetic city with ground truth")
    synth.add_argument("--out", default="synthetic", help="Output directory")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--spec", help="JSON file overriding synthetic city parameters")

    run = sub.add_parser("run", help="Run every stage and write the manifest")
    _add_common(run)
    run.add_argument("--with-sweep", action="store_true", help="Also run the buffer sweep")
    return parser


def _load(args: argparse.Namespace):
    overrides = {
        "output_dir": args.output_dir,
        "seed": args.seed,
        "buffer_width": args.buffer_width,
        "min_tags": args.min_tags,
        "size_threshold": args.size_threshold,
    }
    config = load_config(args.config, overrides)
    if getattr(args, "sizes", None):
        config = config.model_copy(update={"sweep": config.sweep.model_copy(update={"sizes": args.sizes})})
    return config


def _combine_annotations(args: argparse.Namespace) -> int:
    if not args.out:
        raise ValidationError("--out is required with --annotations")
    terms = intersect_annotations([load_annotations(p) for p in args.annotations])
    path = write_lexicon((SmellTerm(t, args.language) for t in terms), args.out)
    lexicon = load_lexicon(path, load_blocklist(args.blocklist))
    write_lexicon(lexicon.terms, path)
    print(f"{len(lexicon)} terms agreed by all {len(args.annotations)} annotators -> {path}")
    return 0


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "synth":
        spec = json.loads(Path(args.spec).read_text(encoding="utf-8")) if args.spec else None
        paths = generate_synthetic_city(spec, seed=args.seed, out_dir=args.out)
        print(f"Synthetic city written; run it with: smellscape.py run --config {paths['config']}")
        return 0
    if args.command == "lexicon" and args.annotations:
        return _combine_annotations(args)

    config = _load(args)
    if args.command == "run":
        stages = RUN_ORDER + ["sweep"] if args.with_sweep else RUN_ORDER
        manifest = run_pipeline(config, stages)
        print(json.dumps({"outputs": len(manifest["outputs"]), "output_dir": str(config.output_dir)}))
        return 0
    counts = run_stage(args.command, config)
    print(json.dumps(counts, sort_keys=True, default=str))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return dispatch(args)
    except ValidationError as e:
        logger.error(str(e))
        return 1
    except StageError as e:
        logger.error(str(e))
        return 1 if isinstance(e.cause, ValidationError) else 2
    except Exception as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
