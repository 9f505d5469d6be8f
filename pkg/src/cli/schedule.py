"""``schedule``: per-epoch masking ratio, batch size, step count and learning rate."""

import argparse
from pathlib import Path

from src.cli import emit_json, load_config
from src.schedulers import build_epoch_plans


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, required=True, help="Run configuration JSON")


def run(args: argparse.Namespace) -> int:
    plan = build_epoch_plans(load_config(args.config))
    emit_json(
        {
            "total_steps": plan.total_steps,
            "warmup_steps": plan.warmup_steps,
            "rows": plan.rows(),
        }
    )
    return 0
