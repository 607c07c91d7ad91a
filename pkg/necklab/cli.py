"""Command-line entry point."""

from __future__ import annotations

import argparse
import logging
from collections.abc import Sequence

from .config import PRESET_NAMES, ExperimentManifest, load_manifest, parse_assignment
from .const import (
    CONF_OUTPUT_DIR,
    CONF_RUN_ID,
    CONF_SEED,
    EXIT_OK,
    FEATURE_T,
    FEATURES,
)
from .exceptions import NecklabError
from .experiments import (
    GRID_TRICKS,
    GRIDS,
    cmd_ablate,
    cmd_eval,
    cmd_export_scatter,
    cmd_sweep_beta,
    cmd_train,
)

_LOGGER = logging.getLogger(__name__)

DEFAULT_BETAS = (0.0, 0.0005, 0.005, 0.05, 0.5)
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _betas(value: str) -> list[float]:
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated numbers, got {value!r}"
        ) from err


def build_parser() -> argparse.ArgumentParser:
    """Return the parser for every verb."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="manifest file of key = value lines")
    common.add_argument("--preset", choices=PRESET_NAMES, help="preset applied before the file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one manifest key; applied last, may repeat",
    )
    common.add_argument("--run-id", help=f"shorthand for --set {CONF_RUN_ID}=...")
    common.add_argument("--output-dir", help=f"shorthand for --set {CONF_OUTPUT_DIR}=...")
    common.add_argument("--seed", type=int, help=f"shorthand for --set {CONF_SEED}=...")
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="logging threshold (default INFO)",
    )

    parser = argparse.ArgumentParser(
        prog="necklab", description="Train and evaluate metric-learning necks."
    )
    verbs = parser.add_subparsers(dest="verb", required=True)
    verbs.add_parser("train", parents=[common], help="train one model")

    eval_parser = verbs.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    eval_parser.add_argument("--checkpoint", help="checkpoint file (default: the run's own)")

    sweep = verbs.add_parser("sweep-beta", parents=[common], help="sweep the center-loss weight")
    sweep.add_argument(
        "--betas",
        type=_betas,
        default=list(DEFAULT_BETAS),
        help="comma-separated weights (default 0,0.0005,0.005,0.05,0.5)",
    )

    ablate = verbs.add_parser("ablate", parents=[common], help="train an ablation grid")
    ablate.add_argument("--grid", choices=GRIDS, default=GRID_TRICKS)

    scatter = verbs.add_parser(
        "export-scatter", parents=[common], help="write 2-D embeddings for plotting"
    )
    scatter.add_argument("--checkpoint", help="checkpoint file (default: the run's own)")
    scatter.add_argument("--feature", choices=FEATURES, default=FEATURE_T)
    return parser


def manifest_from_args(args: argparse.Namespace) -> ExperimentManifest:
    """Resolve the manifest a parsed command line describes."""
    overrides = []
    for key, value in (
        (CONF_RUN_ID, args.run_id),
        (CONF_OUTPUT_DIR, args.output_dir),
        (CONF_SEED, args.seed),
    ):
        if value is not None:
            overrides.append((key, value))
    overrides.extend(parse_assignment(item) for item in args.overrides)
    return load_manifest(args.config, args.preset, overrides)


def run(args: argparse.Namespace) -> None:
    """Dispatch a parsed command line."""
    manifest = manifest_from_args(args)
    _LOGGER.info("Run %s, manifest %s", manifest.run_id, manifest.hash)
    if args.verb == "train":
        cmd_train(manifest)
    elif args.verb == "eval":
        cmd_eval(manifest, args.checkpoint)
    elif args.verb == "sweep-beta":
        cmd_sweep_beta(manifest, args.betas)
    elif args.verb == "ablate":
        cmd_ablate(manifest, args.grid)
    elif args.verb == "export-scatter":
        cmd_export_scatter(manifest, args.checkpoint, args.feature)


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line and return the process exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT)
    try:
        run(args)
    except NecklabError as err:
        _LOGGER.error("%s", err)
        return err.exit_code
    return EXIT_OK
