"""Logging configuration using loguru, plus the run output directory."""

import json
import os
import sys
from pathlib import Path
from typing import IO

from loguru import logger
from pydantic import BaseModel

OUTPUT_DIR_ENV = "DIFFMAVIL_OUTPUT_DIR"


def configure_logging(verbose: bool = False, debug: bool = False) -> None:
    """Configure logging based on verbosity level.

    Args:
        verbose: Enable info-level logging
        debug: Enable debug-level logging (overrides verbose)
    """
    logger.remove()

    if debug:
        level = "DEBUG"
    elif verbose:
        level = "INFO"
    else:
        level = "WARNING"

    logger.add(
        sys.stderr,
        level=level,
        format=(
            "<level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan>"
            " - <level>{message}</level>"
        ),
        colorize=True,
    )


def resolve_output_dir(cli_value: Path | None, config_value: str) -> Path:
    """``--out`` wins over ``DIFFMAVIL_OUTPUT_DIR``, which wins over the config."""
    if cli_value is not None:
        return Path(cli_value)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(config_value)


class MetricsWriter:
    """JSONL stream flushed after every record."""

    def __init__(self, path: Path):
        self.path = path
        self._file: IO[str] | None = open(path, "w")
        self.records = 0

    def write(self, record: BaseModel | dict) -> None:
        data = record.model_dump() if isinstance(record, BaseModel) else record
        self._file.write(json.dumps(data) + "\n")
        self._file.flush()
        self.records += 1

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


class RunArtifacts:
    """Owns the output directory of a run."""

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Run artifacts will be saved to: {self.output_dir}")

    def path(self, name: str) -> Path:
        return self.output_dir / name

    @property
    def checkpoint_path(self) -> Path:
        return self.output_dir / "checkpoint.bin"

    @property
    def data_dir(self) -> Path:
        return self.output_dir / "data"

    def save_json(self, name: str, data: dict | list) -> Path:
        """Save JSON data as ``<name>.json``.

        Args:
            name: Base name for the file (without extension)
            data: Data to serialize as JSON

        Returns:
            Path to saved file
        """
        path = self.output_dir / f"{name}.json"
        path.write_text(json.dumps(data, indent=2, default=str))
        logger.debug(f"Saved JSON: {path}")
        return path

    def open_metrics(self, name: str = "metrics") -> MetricsWriter:
        return MetricsWriter(self.output_dir / f"{name}.jsonl")
