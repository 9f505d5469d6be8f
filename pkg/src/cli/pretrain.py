"""``pretrain``: stage-1 pretraining on synthetic pairs."""

import argparse
from pathlib import Path

from loguru import logger

from src.cli import emit_json, load_config
from src.logging_config import RunArtifacts, resolve_output_dir
from src.pipeline import Pretrainer


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, required=True, help="Run configuration JSON")
    parser.add_argument("--seed", type=int, default=None, help="Override the run seed")
    parser.add_argument("--out", type=Path, default=None, help="Output directory (default: from config)")
    parser.add_argument("--steps", type=int, default=None, help="Stop after N optimizer steps")
    parser.add_argument(
        "--evaluate",
        action="store_true",
        help="Report audio-video alignment on held-out pairs after training",
    )


def run(args: argparse.Namespace) -> int:
    config = load_config(args.config, seed=args.seed)
    if args.steps is not None and args.steps < 1:
        logger.error(f"--steps must be positive, got {args.steps}")
        return 1
    artifacts = RunArtifacts(resolve_output_dir(args.out, config.output_dir))

    with Pretrainer(config, artifacts=artifacts, max_steps=args.steps) as trainer:
        result = trainer.run()
        summary = {
            "mode": str(config.mode),
            "steps": result.steps,
            "initial_mse": result.initial_mse if result.history else None,
            "final_mse": result.final_mse if result.history else None,
            "cumulative_flops": result.cumulative_flops,
            "checkpoint": str(result.checkpoint_path),
            "audio_built": result.stats.audio_built,
            "video_built": result.stats.video_built,
        }
        if args.evaluate and config.include_video:
            report = trainer.evaluate()
            summary["alignment"] = {
                "positive_cosine": report.positive_cosine,
                "negative_cosine": report.negative_cosine,
                "latent_r2": report.latent_r2,
            }
        elif args.evaluate:
            logger.warning(f"Mode '{config.mode}' has no video branch; skipping alignment")

    artifacts.save_json("summary", summary)
    emit_json(summary)
    return 0
