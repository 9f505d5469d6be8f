import json
from pathlib import Path

import numpy as np
import pytest

from src.config import RunConfig
from src.losses import PairBatch
from src.synthetic import generate_dataset

CONFIG_DIR = Path(__file__).parent.parent / "config"


def load_run_config(name: str, **overrides) -> RunConfig:
    """Shipped config with top-level sections shallow-merged from ``overrides``."""
    data = json.loads((CONFIG_DIR / name).read_text())
    for key, value in overrides.items():
        if isinstance(value, dict):
            data.setdefault(key, {}).update(value)
        else:
            data[key] = value
    return RunConfig.model_validate(data)


def make_batch(config: RunConfig, ids=(0, 1, 2)) -> PairBatch:
    pairs = generate_dataset(ids, config.data, include_video=config.include_video)
    return PairBatch.from_arrays(
        list(ids),
        [p.audio for p in pairs],
        config.data.audio_spec,
        [p.video for p in pairs] if config.include_video else None,
        config.data.video_spec,
    )


@pytest.fixture
def toy_config() -> RunConfig:
    return load_run_config("toy.json")


@pytest.fixture
def toy_batch(toy_config) -> PairBatch:
    return make_batch(toy_config)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
