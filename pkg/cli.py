"""Command-line entry point: `attribpaint train | infer | eval | fixture`.

Exit codes: 0 success, 1 usage or config error, 2 data, checkpoint or
evaluation error, 3 numerical failure.
"""

import argparse
import hashlib
import itertools
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch
from dotenv import load_dotenv
from torchvision.utils import make_grid

from conditioning import AttributeSet, build_condition
from config import DEFAULT_IS_SPLITS, LOG_LEVEL, RunConfig, load_config
from evaluation import evaluate_checkpoint
from fixtures import write_fixture
from networks import ForwardGenerator, forward_generate
from painter_core import (
    AXES,
    AttributeSchema,
    CheckpointError,
    ConfigError,
    DataError,
    EvaluationError,
    Mode,
    NumericalError,
    PainterError,
    PreconditionError,
    ShapeError,
)
from painting_data import preprocess, save_image
from training import CHECKPOINT_NAME, build_training_dataset, fit, restore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3
REPORT_NAME = "metrics_report.json"
GRID_PADDING = 2


class UsageError(PainterError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _resolve_config(path: Optional[str], seed: Optional[int]) -> RunConfig:
    config = load_config(path) if path else RunConfig.from_env()
    if seed is not None:
        config = config.with_overrides(seed=seed)
    return config


##################################################################################
# train
##################################################################################

def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args.config, args.seed)
    dataset = build_training_dataset(config, args.data_root)
    resume = args.resume
    if resume is not None and Path(resume).is_dir():
        resume = Path(resume) / CHECKPOINT_NAME
    result = fit(config, dataset, args.out, resume=resume)
    logger.info(f"Checkpoint: {result.checkpoint_path}; metrics: {result.metrics_path}")
    return EXIT_OK


##################################################################################
# infer
##################################################################################

def _parse_vector(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--condition-vector must be comma-separated numbers, got '{text}'") from None


def _request_condition(args: argparse.Namespace, schema: AttributeSchema) -> Tuple[AttributeSet, str]:
    """Condition and output-name suffix for an infer request."""
    if args.condition_vector is not None:
        if any(v is not None for v in (args.artist, args.period, args.genre)):
            raise UsageError("use either --condition-vector or --artist/--period/--genre, not both")
        vector = _parse_vector(args.condition_vector)
        condition = AttributeSet.from_vector(vector, schema)
        tag = hashlib.sha256(args.condition_vector.encode("utf-8")).hexdigest()[:8]
        return condition, f"vector_{tag}"
    missing = [axis for axis in AXES if getattr(args, axis) is None]
    if missing:
        raise UsageError(f"missing --{missing[0]} (or pass --condition-vector)")
    condition = build_condition(args.artist, args.period, args.genre, Mode.TEST, schema, None)
    return condition, f"{args.artist}_{args.period}_{args.genre}"


def _stylize(generator: ForwardGenerator, x: torch.Tensor, condition: AttributeSet, dtype: torch.dtype) -> torch.Tensor:
    x = x.to(dtype)
    with torch.no_grad():
        return forward_generate(generator, x, condition.concatenated.to(dtype))


def _grid_for_file(generator: ForwardGenerator, path: Path, schema: AttributeSchema, image_size: int,
                   dtype: torch.dtype) -> torch.Tensor:
    """One tile per (artist, period, genre) in schema order, one row per artist."""
    x = preprocess(path, image_size)
    tiles = []
    for artist, period, genre in itertools.product(schema.artists, schema.periods, schema.genres):
        condition = build_condition(artist, period, genre, Mode.TEST, schema, None)
        tiles.append(_stylize(generator, x, condition, dtype)[0])
    row = len(schema.periods) * len(schema.genres)
    return make_grid(torch.stack(tiles).float(), nrow=row, padding=GRID_PADDING, pad_value=1.0)


def cmd_infer(args: argparse.Namespace) -> int:
    state = restore(args.checkpoint)
    config, schema = state.config, state.schema
    generator = state.networks.forward_generator.eval()
    out_dir = Path(args.out)
    contents = [Path(p) for p in args.content]
    for path in contents:
        if not path.is_file():
            raise DataError(f"content image not found: {path}")

    if args.grid:
        def work(path: Path) -> Path:
            grid = _grid_for_file(generator, path, schema, config.image_size, state.dtype)
            return save_image(grid, out_dir / f"{path.stem}__grid.png")
    else:
        condition, suffix = _request_condition(args, schema)

        def work(path: Path) -> Path:
            image = _stylize(generator, preprocess(path, config.image_size), condition, state.dtype)
            return save_image(image, out_dir / f"{path.stem}__{suffix}.png")

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        written = list(pool.map(work, contents))
    for path in written:
        logger.info(f"Wrote {path}")
    return EXIT_OK


##################################################################################
# eval
##################################################################################

def cmd_eval(args: argparse.Namespace) -> int:
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    unknown = [a for a in axes if a not in AXES]
    if not axes or unknown:
        raise UsageError(f"--axes must list axes from {', '.join(AXES)}")
    report = evaluate_checkpoint(args.checkpoint, args.data_root, axes, args.splits, seed=args.seed)
    report.write(Path(args.out) / REPORT_NAME)
    return EXIT_OK


def cmd_fixture(args: argparse.Namespace) -> int:
    style, content = write_fixture(args.out, seed=args.seed, image_size=args.image_size)
    logger.info(f"Fixture manifests: {style}, {content}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attribpaint", description="Multi-attribute guided painting generation")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="logging level (default: %(default)s)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="train the four networks")
    train.add_argument("--config", help="JSON config file (default: $ATTRIBPAINT_CONFIG or built-in defaults)")
    train.add_argument("--data-root", required=True, help="directory holding style.jsonl and content.jsonl")
    train.add_argument("--out", required=True, help="run directory for checkpoints and metrics")
    train.add_argument("--resume", help="checkpoint to continue from")
    train.add_argument("--seed", type=int)
    train.set_defaults(handler=cmd_train)

    infer = sub.add_parser("infer", help="stylise content images under an attribute condition")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("--content", required=True, nargs="+", help="content image path(s)")
    infer.add_argument("--out", required=True)
    infer.add_argument("--artist")
    infer.add_argument("--period")
    infer.add_argument("--genre")
    infer.add_argument("--condition-vector", help="raw comma-separated condition vector for attribute mixing; "
                       "write --condition-vector=-0.5,1,... when the first value is negative")
    infer.add_argument("--grid", action="store_true", help="write one contact sheet over all label combinations")
    infer.add_argument("--workers", type=int, default=1, help="content images processed in parallel")
    infer.set_defaults(handler=cmd_infer)

    evaluate = sub.add_parser("eval", help="judge accuracy and Inception Score of a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--data-root", required=True)
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--axes", default="artist", help="comma-separated axes (default: %(default)s)")
    evaluate.add_argument("--splits", type=int, default=DEFAULT_IS_SPLITS)
    evaluate.add_argument("--seed", type=int, help="judge seed (default: the checkpoint's run seed)")
    evaluate.set_defaults(handler=cmd_eval)

    fixture = sub.add_parser("fixture", help="write the synthetic fixture data set")
    fixture.add_argument("--out", required=True)
    fixture.add_argument("--seed", type=int, default=0)
    fixture.add_argument("--image-size", type=int, default=64)
    fixture.set_defaults(handler=cmd_fixture)
    return parser


def exit_code_for(error: Exception) -> int:
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(error, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(error, (DataError, CheckpointError, EvaluationError, ShapeError, PreconditionError)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
        if args.command == "infer" and args.workers < 1:
            raise UsageError("--workers must be at least 1")
    except UsageError as e:
        print(f"attribpaint: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.handler(args)
    except PainterError as e:
        logger.error(str(e))
        print(f"attribpaint: error: {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
