"""``flops``: analytic pretraining FLOPS of a configuration, optionally against a baseline."""

import argparse
import sys
from pathlib import Path

from src.cli import emit_json, load_config
from src.flops import flops_compare, flops_pretraining, render_ratio_table, workload_from_config


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, required=True, help="Candidate configuration JSON")
    parser.add_argument("--baseline", type=Path, default=None, help="Baseline configuration JSON")


def run(args: argparse.Namespace) -> int:
    report = flops_pretraining(workload_from_config(load_config(args.config)), name=args.config.stem)
    if args.baseline is None:
        emit_json(report.model_dump())
        return 0

    baseline = flops_pretraining(workload_from_config(load_config(args.baseline)), name=args.baseline.stem)
    comparison = flops_compare(report, baseline)
    emit_json(
        {
            "candidate": report.model_dump(),
            "baseline": baseline.model_dump(),
            "ratios": comparison.ratios,
            "linear_encoder_ratios": comparison.linear_encoder_ratios,
            "total_ratio": comparison.total_ratio,
            "flops_reduction": comparison.flops_reduction,
        }
    )
    # table on stderr keeps stdout parseable
    print(render_ratio_table(comparison), file=sys.stderr)
    return 0
