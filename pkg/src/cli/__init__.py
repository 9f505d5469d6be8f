"""Command-line entry points for pretraining, FLOPS accounting and inspection."""

import json
import sys
from pathlib import Path

from loguru import logger
from pydantic import ValidationError

from src.config import RunConfig

# Shipped configurations (relative to package)
CONFIG_DIR = Path(__file__).parent.parent.parent / "config"


def format_validation_error(error: ValidationError) -> list[str]:
    """One ``field.path: message`` line per failing field."""
    lines = []
    for err in error.errors():
        path = ".".join(str(part) for part in err["loc"]) or "(root)"
        lines.append(f"{path}: {err['msg']}")
    return lines


def load_config(config_path: Path | None, seed: int | None = None) -> RunConfig:
    """Load and validate a run configuration, exiting with status 1 on failure.

    Args:
        config_path: JSON file; all defaults (full-scale DiffMAViL) when None
        seed: Overrides the configured run seed

    Returns:
        Validated RunConfig
    """
    data = {}
    if config_path is not None:
        if not config_path.exists():
            logger.error(f"Config file not found: {config_path}")
            sys.exit(1)
        try:
            data = json.loads(config_path.read_text())
        except json.JSONDecodeError as e:
            logger.error(f"Failed to parse config file {config_path}: {e}")
            sys.exit(1)
    if seed is not None:
        data["seed"] = seed

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        for line in format_validation_error(e):
            logger.error(f"Invalid config {config_path}: {line}")
        sys.exit(1)


def emit_json(data) -> None:
    print(json.dumps(data, indent=2, default=str))
