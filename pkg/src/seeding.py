"""Deterministic random streams."""

import numpy as np

SeedLike = int | list[int] | tuple[int, ...] | np.random.Generator


def _entropy(keys) -> np.random.SeedSequence:
    # Arity leads the entropy so (a, b) and (a, b, 0) never share a state.
    return np.random.SeedSequence([len(keys), *(int(k) for k in keys)])


def as_generator(seed: SeedLike) -> np.random.Generator:
    """Return ``seed`` if it already is a generator, else a fresh PCG64 stream."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng(_entropy(seed))
    return np.random.default_rng(seed)


def stream(*keys: int) -> np.random.Generator:
    """Independent stream addressed by a tuple of non-negative integers.

    ``stream(run_seed, step, instance, purpose)`` always yields the same
    numbers, regardless of the order in which streams are created. Keys of
    different lengths address different streams even when the longer one
    only adds zeros.
    """
    return np.random.default_rng(_entropy(keys))
