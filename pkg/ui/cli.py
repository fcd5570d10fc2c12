"""Command-line entry point: `python -m ui.cli <command> [options]`."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from config import settings
from pipelines.mnist_io import IdxFormatError
from pipelines.moqe import CalibrationError
from simulator.autodiff import NotCalibratedError
from ui.commands import BASELINE_KINDS, COMMANDS, resolve

logger = logging.getLogger(__name__)

EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moqe", description="Mixture of Quantum Experts simulator for MNIST parity.")
    parser.add_argument("--version", action="version", version=settings.VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    # Options left unset stay out of the namespace so a config file can supply them.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with option values (keys mirror the long flags)")
    common.add_argument("--log-level", help=f"logging level (default {settings.LOG_LEVEL})")
    common.add_argument("--data-dir", help="directory with the four MNIST IDX files")
    common.add_argument("--out-dir", help="parent directory of run directories")
    common.add_argument("--run-name", help="run directory name (default derived from the options)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)

    circuit = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    circuit.add_argument("--schedule", choices=["ladder21", "ladder13"])
    circuit.add_argument("--layers", type=int)
    circuit.add_argument("--reverse-ladder", action="store_true", help="climb from the finest scale down")

    training = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    training.add_argument("--epochs", type=int)
    training.add_argument("--batch-size", type=int)
    training.add_argument("--lr", type=float)
    training.add_argument("--train-subset", type=int, help="use the first N images of the train selection")

    verify = sub.add_parser("verify-data", parents=[common], argument_default=argparse.SUPPRESS,
                            help="check IDX magics, counts and digests")
    verify.add_argument("--digests", help="JSON manifest of pinned SHA-256 digests")
    verify.add_argument("--write-digests", help="write the computed SHA-256 digests to this JSON file")
    verify.add_argument("--counts", type=_int_list, help="expected train,test image counts")
    verify.add_argument("--allow-unpinned", action="store_true", help="pass files that have no pinned SHA-256")

    train = sub.add_parser("train", parents=[common, circuit, training], argument_default=argparse.SUPPRESS,
                           help="initialize, calibrate and train a mixture")
    train.add_argument("--experts", type=int)
    train.add_argument("--grad", choices=list(settings.GRADIENT_METHODS))
    train.add_argument("--calibration-size", type=int)

    evaluate = sub.add_parser("eval", parents=[common], argument_default=argparse.SUPPRESS,
                              help="accuracy and output histograms of a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--train-subset", type=int, dest="eval_subset",
                          help="train-selection size to score (default: the run's config.json)")

    gradcheck = sub.add_parser("gradcheck", parents=[common, circuit], argument_default=argparse.SUPPRESS,
                               help="adjoint vs parameter-shift vs finite differences")
    gradcheck.add_argument("--configs", type=int, help="number of random configurations")

    baseline = sub.add_parser("baseline", parents=[common, training], argument_default=argparse.SUPPRESS,
                              help="train the quadratic or CNN classifier")
    baseline.add_argument("--kind", choices=list(BASELINE_KINDS))
    baseline.add_argument("--c", type=_int_list, help="channels c1,c2,c3,c4")
    baseline.add_argument("--h", type=int, help="hidden width")

    compare = sub.add_parser("compare", parents=[common], argument_default=argparse.SUPPRESS,
                             help="aggregate compute series of several runs")
    compare.add_argument("runs", nargs="+", help="run directories containing compute_series.csv")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    logging.basicConfig(level=args.pop("log_level", settings.LOG_LEVEL).upper(), format=settings.LOG_FORMAT)

    try:
        cfg = resolve(command, args, config_path)
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    logger.debug("Resolved config: %s", cfg)

    try:
        return COMMANDS[command](cfg)
    except (IdxFormatError, OSError, CalibrationError, NotCalibratedError) as exc:
        logger.error("%s", exc)
        return EXIT_CHECK_FAILED
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
