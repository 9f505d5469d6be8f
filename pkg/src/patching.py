"""Patchify spectrograms and video clips, and build masking plans."""

import math
from dataclasses import dataclass
from enum import StrEnum
from fractions import Fraction
from typing import Protocol

import numpy as np

from src.autodiff import Tensor, ops
from src.seeding import SeedLike, as_generator


class GeometryError(Exception):
    """Input shape does not tile into whole patches."""

    pass


class PlanError(Exception):
    """Masking plan does not fit the data it is applied to."""

    pass


class DegeneratePlanError(PlanError):
    """Rounding left no visible or no masked patches."""

    pass


class Modality(StrEnum):
    AUDIO = "audio"
    VIDEO = "video"


@dataclass(frozen=True)
class PatchSpec:
    """Patch geometry.

    Audio sizes are ``(time, freq)``; video sizes are
    ``(temporal, height, width)`` over ``channels``-channel frames.
    """

    modality: Modality
    size: tuple[int, ...]
    channels: int = 1

    @classmethod
    def audio(cls, time: int = 16, freq: int = 16) -> "PatchSpec":
        return cls(Modality.AUDIO, (time, freq))

    @classmethod
    def video(cls, temporal: int = 2, spatial: int = 16, channels: int = 1) -> "PatchSpec":
        return cls(Modality.VIDEO, (temporal, spatial, spatial), channels)

    @property
    def patch_dim(self) -> int:
        return math.prod(self.size) * (self.channels if self.modality == Modality.VIDEO else 1)

    def grid_dims(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        """Patches per axis for an input of ``shape``."""
        if self.modality == Modality.AUDIO:
            axes = ("time", "freq")
            if len(shape) != 2:
                raise GeometryError(f"audio input must be [T x F], got shape {shape}")
        else:
            axes = ("frames", "height", "width")
            if len(shape) != 4:
                raise GeometryError(f"video input must be [frames x H x W x C], got shape {shape}")
            if shape[3] != self.channels:
                raise GeometryError(f"video has {shape[3]} channels, patch spec expects {self.channels}")
        dims = []
        for axis, length, patch in zip(axes, shape, self.size):
            if length % patch != 0:
                raise GeometryError(
                    f"{self.modality} axis '{axis}' of length {length} is not divisible by patch size {patch}"
                )
            dims.append(length // patch)
        return tuple(dims)


@dataclass
class PatchGrid:
    """Flattened patches plus the geometry needed to undo the flattening.

    ``patches`` is ``[M x patch_dim]`` for one instance or
    ``[B x M x patch_dim]`` for a stacked batch.
    """

    spec: PatchSpec
    grid_dims: tuple[int, ...]
    patches: Tensor

    @property
    def modality(self) -> Modality:
        return self.spec.modality

    @property
    def patch_dim(self) -> int:
        return self.spec.patch_dim

    @property
    def num_patches(self) -> int:
        return math.prod(self.grid_dims)


def patchify(x: np.ndarray | Tensor, spec: PatchSpec) -> PatchGrid:
    """Cut ``x`` into non-overlapping patches in grid (row-major) order."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    dims = spec.grid_dims(data.shape)
    if spec.modality == Modality.AUDIO:
        (gt, gf), (pt, pf) = dims, spec.size
        blocks = data.reshape(gt, pt, gf, pf).transpose(0, 2, 1, 3)
    else:
        (gt, gh, gw), (pt, ph, pw) = dims, spec.size
        c = spec.channels
        blocks = data.reshape(gt, pt, gh, ph, gw, pw, c).transpose(0, 2, 4, 1, 3, 5, 6)
    patches = np.ascontiguousarray(blocks).reshape(math.prod(dims), spec.patch_dim)
    return PatchGrid(spec=spec, grid_dims=dims, patches=Tensor(patches))


def unpatchify(grid: PatchGrid) -> np.ndarray:
    """Inverse of ``patchify`` for a single instance."""
    data = grid.patches.data
    if data.ndim != 2:
        raise GeometryError(f"unpatchify expects [M x patch_dim], got {data.shape}")
    spec = grid.spec
    if spec.modality == Modality.AUDIO:
        (gt, gf), (pt, pf) = grid.grid_dims, spec.size
        return data.reshape(gt, gf, pt, pf).transpose(0, 2, 1, 3).reshape(gt * pt, gf * pf)
    (gt, gh, gw), (pt, ph, pw) = grid.grid_dims, spec.size
    c = spec.channels
    blocks = data.reshape(gt, gh, gw, pt, ph, pw, c).transpose(0, 3, 1, 4, 2, 5, 6)
    return blocks.reshape(gt * pt, gh * ph, gw * pw, c)


def stack_grids(grids: list[PatchGrid]) -> PatchGrid:
    """Stack same-geometry single-instance grids into one batched grid."""
    first = grids[0]
    for g in grids[1:]:
        if g.spec != first.spec or g.grid_dims != first.grid_dims:
            raise GeometryError("cannot stack grids with different geometry")
    stacked = np.stack([g.patches.data for g in grids])
    return PatchGrid(spec=first.spec, grid_dims=first.grid_dims, patches=Tensor(stacked))


def exact_decimal(value: float) -> Fraction:
    """``value`` as the decimal it prints as, so ``0.95`` is exactly ``19/20``."""
    return Fraction(str(float(value)))


def visible_count(total: int, mask_ratio: float) -> int:
    """Visible patches left by ``mask_ratio``: nearest integer, ties to even."""
    return round((1 - exact_decimal(mask_ratio)) * total)


@dataclass(frozen=True)
class MaskingPlan:
    """Partition of ``range(total)`` into visible and masked patch indices.

    ``restore_permutation[i]`` is the row of ``[visible || masked]`` that holds
    original patch ``i``.
    """

    total: int
    mask_ratio: float
    visible_indices: np.ndarray
    masked_indices: np.ndarray
    restore_permutation: np.ndarray

    @property
    def num_visible(self) -> int:
        return int(self.visible_indices.shape[-1])

    @property
    def num_masked(self) -> int:
        return int(self.masked_indices.shape[-1])


class PlanLike(Protocol):
    total: int
    visible_indices: np.ndarray
    masked_indices: np.ndarray
    restore_permutation: np.ndarray

    @property
    def num_visible(self) -> int: ...

    @property
    def num_masked(self) -> int: ...


def make_masking_plan(total: int, mask_ratio: float, seed: SeedLike) -> MaskingPlan:
    """Draw a uniform random visible subset of size ``round((1 - rho) * M)``."""
    if total < 1:
        raise PlanError(f"need at least one patch, got M={total}")
    if not 0.0 < mask_ratio < 1.0:
        raise PlanError(f"mask ratio must lie in (0, 1), got {mask_ratio}")
    n_visible = visible_count(total, mask_ratio)
    if n_visible == 0 or n_visible == total:
        raise DegeneratePlanError(
            f"M={total}, rho={mask_ratio} rounds to {n_visible} visible patches"
        )
    perm = as_generator(seed).permutation(total)
    visible = np.sort(perm[:n_visible])
    masked = np.sort(perm[n_visible:])
    restore = np.argsort(np.concatenate([visible, masked]), kind="stable")
    return MaskingPlan(
        total=total,
        mask_ratio=mask_ratio,
        visible_indices=visible,
        masked_indices=masked,
        restore_permutation=restore,
    )


@dataclass(frozen=True)
class BatchedPlan:
    """Per-instance plans of equal cardinality stacked row-wise."""

    plans: tuple[MaskingPlan, ...]

    def __post_init__(self):
        first = self.plans[0]
        for p in self.plans[1:]:
            if p.total != first.total or p.num_visible != first.num_visible:
                raise PlanError("all plans in a batch must share M and the visible count")

    @property
    def total(self) -> int:
        return self.plans[0].total

    @property
    def num_visible(self) -> int:
        return self.plans[0].num_visible

    @property
    def num_masked(self) -> int:
        return self.plans[0].num_masked

    @property
    def visible_indices(self) -> np.ndarray:
        return np.stack([p.visible_indices for p in self.plans])

    @property
    def masked_indices(self) -> np.ndarray:
        return np.stack([p.masked_indices for p in self.plans])

    @property
    def restore_permutation(self) -> np.ndarray:
        return np.stack([p.restore_permutation for p in self.plans])

    def __len__(self) -> int:
        return len(self.plans)


def _check_plan(grid: PatchGrid, plan: PlanLike) -> None:
    if plan.total != grid.num_patches:
        raise PlanError(f"plan covers {plan.total} patches, grid has {grid.num_patches}")
    batched = grid.patches.ndim == 3
    if batched != isinstance(plan, BatchedPlan):
        raise PlanError("batched grids need a BatchedPlan and single grids a MaskingPlan")
    if batched and len(plan) != grid.patches.shape[0]:
        raise PlanError(f"plan has {len(plan)} instances, grid has {grid.patches.shape[0]}")


def gather_visible(grid: PatchGrid, plan: PlanLike) -> Tensor:
    _check_plan(grid, plan)
    return ops.gather_rows(grid.patches, plan.visible_indices)


def gather_masked(grid: PatchGrid, plan: PlanLike) -> Tensor:
    _check_plan(grid, plan)
    return ops.gather_rows(grid.patches, plan.masked_indices)


def restore_order(visible: Tensor, masked: Tensor, plan: PlanLike) -> Tensor:
    """Interleave visible and masked rows back into original patch order."""
    seq_axis = visible.ndim - 2
    if visible.shape[seq_axis] != plan.num_visible or masked.shape[seq_axis] != plan.num_masked:
        raise PlanError(
            f"expected {plan.num_visible} visible and {plan.num_masked} masked rows, "
            f"got {visible.shape[seq_axis]} and {masked.shape[seq_axis]}"
        )
    joined = ops.concat([visible, masked], axis=seq_axis)
    return ops.gather_rows(joined, plan.restore_permutation)
