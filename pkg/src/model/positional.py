"""Fixed sinusoidal positional tables."""

from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from src.patching import Modality, PatchSpec


class PositionalKind(StrEnum):
    SINUSOIDAL_1D_GRID = "sinusoidal_1d_grid"
    SEPARABLE_SPATIOTEMPORAL = "separable_spatiotemporal"


def sinusoidal_table(positions: np.ndarray, dim: int) -> np.ndarray:
    """``[len(positions) x dim]`` table: sines in the first half, cosines in the second."""
    if dim % 2 != 0:
        raise ValueError(f"sinusoidal tables need an even dimension, got {dim}")
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    angles = np.outer(np.asarray(positions, dtype=np.float64), omega)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def sinusoidal_1d_grid(length: int, dim: int) -> np.ndarray:
    return sinusoidal_table(np.arange(length), dim)


def sinusoidal_2d(height: int, width: int, dim: int) -> np.ndarray:
    """Row-major ``[height*width x dim]``; half the channels encode rows, half columns."""
    if dim % 4 != 0:
        raise ValueError(f"2-D sinusoidal tables need a dimension divisible by 4, got {dim}")
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.concatenate(
        [sinusoidal_table(rows.ravel(), dim // 2), sinusoidal_table(cols.ravel(), dim // 2)],
        axis=1,
    )


def separable_spatiotemporal(frames: int, height: int, width: int, dim: int) -> np.ndarray:
    """Temporal table plus spatial table, flattened in ``(t, h, w)`` order."""
    temporal = sinusoidal_1d_grid(frames, dim)
    spatial = sinusoidal_2d(height, width, dim)
    return (temporal[:, None, :] + spatial[None, :, :]).reshape(frames * height * width, dim)


@dataclass(frozen=True)
class PositionalEmbedding:
    """Constant positional table for one patch grid."""

    kind: PositionalKind
    table: np.ndarray

    @classmethod
    def for_grid(cls, spec: PatchSpec, grid_dims: tuple[int, ...], dim: int) -> "PositionalEmbedding":
        if spec.modality == Modality.AUDIO:
            total = int(np.prod(grid_dims))
            return cls(PositionalKind.SINUSOIDAL_1D_GRID, sinusoidal_1d_grid(total, dim))
        frames, height, width = grid_dims
        return cls(
            PositionalKind.SEPARABLE_SPATIOTEMPORAL,
            separable_spatiotemporal(frames, height, width, dim),
        )

    def rows(self, indices: np.ndarray) -> np.ndarray:
        """Table rows for ``[K]`` or per-instance ``[B x K]`` patch indices."""
        return self.table[np.asarray(indices, dtype=np.int64)]
