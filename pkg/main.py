"""
zscreen: longitudinal biomarker screening with Z-score statistics.

Usage:
    python main.py select-transform --input cohort.csv --output results
    python main.py screen --input cohort.csv --kind t2 --seed 42
    python main.py calibrate --kind t1 --n 10 --seed 42
    python main.py correlate --input cohort.csv --pairs "hemoglobin,hematocrit"
    python main.py tabulate --kind t2 --n 5 10 20 --seed 42
"""
import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from config.settings import MIN_REPS, TOOL_NAME, TOOL_VERSION, get_settings
from models.results import RunConfig, StatKind
from services.screening_service import GROUPINGS
from services.transform_service import parse_transformation
from ui.commands import COMMANDS
from utils.errors import EXIT_OK, exit_code_for
from utils.logger import setup_logging

logger = logging.getLogger(__name__)

SCREEN_KINDS = ["t0", "t1", "t2", "t3", "t4a", "t4b", "t4c"]
MODEL_KINDS = {"A": "t4a", "B": "t4b", "C": "t4c"}


def _alpha(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return value


def _reps(text: str) -> int:
    value = int(text)
    if value < MIN_REPS:
        raise argparse.ArgumentTypeError(f"reps must be at least {MIN_REPS}, got {text}")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"seed must be a non-negative integer, got {text}")
    return value


def _transformation(text: str) -> str:
    try:
        return parse_transformation(text).name
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _pair(text: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2 or not all(parts):
        raise argparse.ArgumentTypeError(f"a pair is 'biomarker_x,biomarker_y', got {text!r}")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(prog=TOOL_NAME, description="Screen longitudinal biomarker sequences "
                                     "for abnormal values with Z-score statistics.")
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", default="results", help="Output directory")
    common.add_argument("--alpha", type=_alpha, default=settings.alpha, help="Significance level")
    common.add_argument("--reps", type=_reps, default=settings.reps, help="Monte Carlo replicates")
    common.add_argument("--seed", type=_seed, default=None, help="Master seed (generated and logged if absent)")
    common.add_argument("--threads", type=int, default=settings.threads, help="Worker threads")
    common.add_argument("--table-path", default=settings.table_path, help="Quantile table file")
    common.add_argument("--log-level", default=settings.log_level, help="Logging level")

    with_input = argparse.ArgumentParser(add_help=False)
    with_input.add_argument("--input", required=True, help="Cohort file (CSV)")
    with_input.add_argument("--biomarker", nargs="+", default=[], help="Biomarker name(s)")
    with_input.add_argument("--min-n", type=int, default=None, help="Minimum sequence length override")

    select = sub.add_parser("select-transform", parents=[common, with_input],
                            help="Choose one transformation per biomarker")
    select.add_argument("--family", type=_transformation, nargs="+", default=[],
                        help="Candidate transformations, e.g. identity log")

    screen = sub.add_parser("screen", parents=[common, with_input], help="Flag abnormal sequences")
    screen.add_argument("--kind", choices=SCREEN_KINDS, default=None, help="Statistic")
    screen.add_argument("--model", choices=sorted(MODEL_KINDS), default=None, help="Linear model (sets --kind t4*)")
    screen.add_argument("--transform", type=_transformation, default=None,
                        help="Transformation override for every biomarker")
    screen.add_argument("--group-by", nargs="+", choices=GROUPINGS, default=["all"], help="Report groupings")
    screen.add_argument("--p-values", action="store_true", help="Also compute Monte Carlo p-values")

    for name, help_text in (("calibrate", "Rejection rate of fresh null samples"),
                            ("tabulate", "Pre-populate the quantile table")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--kind", choices=SCREEN_KINDS if name == "calibrate" else SCREEN_KINDS[1:], default=None)
        p.add_argument("--model", choices=sorted(MODEL_KINDS), default=None)
        p.add_argument("--n", type=int, nargs="+", default=[10], help="Sequence length(s)")
        p.add_argument("--d", type=int, default=1, help="Dimension (t3)")
        if name == "calibrate":
            p.add_argument("--replicates", type=int, default=20_000, help="Fresh null samples")

    correlate = sub.add_parser("correlate", parents=[common, with_input], help="Correlation histograms")
    correlate.add_argument("--pairs", type=_pair, nargs="+", default=[], help="Pairs 'x,y' (default: preset pairs)")
    correlate.add_argument("--bins", type=int, default=20, help="Histogram bins over [-1, 1]")
    return parser


def _resolve_kind(parser: argparse.ArgumentParser, args) -> Optional[str]:
    kind = getattr(args, "kind", None)
    model = getattr(args, "model", None)
    if model:
        if kind and kind != MODEL_KINDS[model]:
            parser.error(f"--model {model} conflicts with --kind {kind}")
        kind = MODEL_KINDS[model]
    if args.command in ("screen", "calibrate", "tabulate") and not kind:
        parser.error(f"{args.command} needs --kind or --model")
    return kind


def resolve_config(parser: argparse.ArgumentParser, args) -> RunConfig:
    """Merge command-line arguments over settings into a RunConfig, generating the seed if needed."""
    seed = args.seed
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2 ** 63))
        logger.info(f"Generated master seed {seed}")
        print(f"seed: {seed}", file=sys.stderr)
    kind = _resolve_kind(parser, args)
    return RunConfig(
        command=args.command,
        input_path=getattr(args, "input", None),
        output_path=args.output,
        alpha=args.alpha,
        reps=args.reps,
        seed=seed,
        kind=kind,
        model=StatKind(kind).model.value if kind and StatKind(kind).model else None,
        biomarkers=tuple(getattr(args, "biomarker", []) or ()),
        transform=getattr(args, "transform", None),
        family=tuple(getattr(args, "family", []) or ()),
        group_by=tuple(getattr(args, "group_by", []) or ()),
        pairs=tuple(getattr(args, "pairs", []) or ()),
        min_n=getattr(args, "min_n", None),
        sizes=tuple(getattr(args, "n", []) or ()),
        d=getattr(args, "d", 1),
        replicates=getattr(args, "replicates", 20_000),
        bins=getattr(args, "bins", 20),
        p_values=getattr(args, "p_values", False),
        block_size=get_settings().block_size,
        threads=max(1, args.threads),
        table_path=args.table_path,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    config = resolve_config(parser, args)

    logger.info(f"Starting {config.command} (seed {config.seed})")
    try:
        written = COMMANDS[config.command](config)
    except Exception as e:
        code = exit_code_for(e)
        if code == 1:
            logger.exception("Unexpected failure")
        print(f"{TOOL_NAME}: error: {e}", file=sys.stderr)
        return code
    logger.info(f"Finished {config.command}: {len(written)} file(s) written")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
