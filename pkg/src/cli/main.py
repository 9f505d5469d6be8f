"""``diffmavil`` command: one subcommand per module under ``src/cli``."""

import argparse
import sys

from loguru import logger

from src.autodiff import ContractError, NumericError, ShapeError
from src.cli import diffuse, flops, gen_data, pretrain, schedule, selftest
from src.diffusion import ScheduleConfigError, StepError
from src.flops import ReportError, WorkloadError
from src.logging_config import configure_logging
from src.losses import DegenerateBatchError
from src.model import CheckpointError
from src.patching import GeometryError, PlanError
from src.pipeline import DivergenceError
from src.schedulers import EpochError

COMMANDS = {
    "pretrain": (pretrain, "Run stage-1 pretraining on synthetic pairs"),
    "flops": (flops, "Analytic pretraining FLOPS, optionally as ratios to a baseline"),
    "schedule": (schedule, "Per-epoch masking ratio, batch size, steps and learning rate"),
    "diffuse": (diffuse, "Inspect one forward diffusion step"),
    "gen-data": (gen_data, "Dump synthetic spectrogram/video pairs"),
    "selftest": (selftest, "Run gradient and invariant checks"),
}

DOMAIN_ERRORS = (
    CheckpointError,
    ContractError,
    DegenerateBatchError,
    DivergenceError,
    EpochError,
    GeometryError,
    NumericError,
    PlanError,
    ReportError,
    ScheduleConfigError,
    ShapeError,
    StepError,
    WorkloadError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffmavil",
        description="Desk-scale DiffMAViL pretraining, schedules and FLOPS accounting",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s selftest
  %(prog)s schedule --config config/toy.json
  %(prog)s flops --config config/diffmavil_full.json --baseline config/mavil_full.json
  %(prog)s pretrain --config config/toy.json --steps 200 --out runs/toy -v
  %(prog)s diffuse --t 500
  %(prog)s gen-data --config config/toy.json --count 4 --out runs/data
        """,
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="Enable verbose output")
    common.add_argument("--debug", action="store_true", help="Enable debug output")

    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (module, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text, parents=[common])
        module.add_arguments(sub)
        sub.set_defaults(handler=module.run)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help
        return e.code if isinstance(e.code, int) else 2

    configure_logging(verbose=args.verbose, debug=args.debug)

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        print("\nInterrupted by user")
        return 130
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    except DOMAIN_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except Exception as e:
        logger.exception(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
