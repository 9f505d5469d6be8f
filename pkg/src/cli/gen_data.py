"""``gen-data``: dump synthetic spectrogram/video pairs as raw fp64 with JSON sidecars."""

import argparse
from pathlib import Path

from src.cli import emit_json, load_config
from src.logging_config import RunArtifacts, resolve_output_dir
from src.synthetic import GenerationStats, dump_pairs, generate_dataset


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, required=True, help="Run configuration JSON (data shapes)")
    parser.add_argument("--seed", type=int, default=0, help="First pair seed")
    parser.add_argument("--count", type=int, default=8, help="Number of pairs")
    parser.add_argument("--out", type=Path, default=None, help="Output directory (default: from config)")


def run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    artifacts = RunArtifacts(resolve_output_dir(args.out, config.output_dir))
    stats = GenerationStats()
    pairs = generate_dataset(
        range(args.seed, args.seed + args.count), config.data, include_video=config.include_video, stats=stats
    )
    written = dump_pairs(pairs, artifacts.data_dir)
    emit_json(
        {
            "directory": str(artifacts.data_dir),
            "pairs": len(pairs),
            "files": len(written),
            "audio_built": stats.audio_built,
            "video_built": stats.video_built,
        }
    )
    return 0
