"""``diffuse``: schedule values and sample statistics of one forward diffusion step."""

import argparse
from pathlib import Path

import numpy as np

from src.cli import emit_json, load_config
from src.diffusion import build_schedule


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--t", type=int, required=True, help="Diffusion step in 1..T")
    parser.add_argument("--config", type=Path, default=None, help="Run configuration JSON (default schedule)")
    parser.add_argument("--seed", type=int, default=0, help="Noise seed")
    parser.add_argument("--count", type=int, default=10_000, help="Number of samples")
    parser.add_argument("--x0", type=float, default=1.0, help="Clean value being diffused")


def run(args: argparse.Namespace) -> int:
    d = load_config(args.config).diffusion
    schedule = build_schedule(d.steps, d.beta_start, d.beta_end, d.phi, d.alpha_bar_uses_raw_beta)
    a = schedule.alpha_bar_at(args.t)
    samples = schedule.diffuse(np.full((args.count, 1), args.x0), args.t, args.seed).data
    emit_json(
        {
            "t": args.t,
            "steps": schedule.steps,
            "beta": float(schedule.beta[args.t - 1]),
            "beta_eff": float(schedule.beta_eff[args.t - 1]),
            "alpha_bar": a,
            "x0": args.x0,
            "count": args.count,
            "expected_mean": float(np.sqrt(a) * args.x0),
            "expected_var": float(1.0 - a),
            "sample_mean": float(samples.mean()),
            "sample_var": float(samples.var()),
        }
    )
    return 0
