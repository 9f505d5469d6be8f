"""Masking-ratio curriculum, adaptive batch sizes and the learning-rate schedule."""

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from src.config import CurriculumConfig, RunConfig
from src.diffusion import ScheduleConfigError
from src.patching import exact_decimal


class EpochError(Exception):
    """Epoch or step index outside the schedule."""

    pass


def lerp(a: float, b: float, t: float) -> float:
    """``a`` at ``t=0`` and ``b`` at ``t=1``, both exact."""
    return a * (1.0 - t) + b * t


@dataclass(frozen=True)
class CurriculumSchedule:
    kind: Literal["fixed", "linear"]
    rho1: float
    rho2: float
    total_epochs: int

    def __post_init__(self):
        if self.kind not in ("fixed", "linear"):
            raise ScheduleConfigError(f"unknown curriculum kind '{self.kind}'")
        for name in ("rho1", "rho2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ScheduleConfigError(f"{name} must lie in (0, 1), got {value}")
        if self.total_epochs < 1:
            raise ScheduleConfigError(f"need at least one epoch, got {self.total_epochs}")

    @classmethod
    def from_config(cls, cfg: CurriculumConfig, epochs: int) -> "CurriculumSchedule":
        rho2 = cfg.rho1 if cfg.rho2 is None else cfg.rho2
        return cls(cfg.kind, cfg.rho1, rho2, epochs)

    @property
    def min_ratio(self) -> float:
        return self.rho1 if self.kind == "fixed" else min(self.rho1, self.rho2)

    @property
    def table(self) -> list[float]:
        return [masking_ratio_at(self, e) for e in range(self.total_epochs)]


def masking_ratio_at(schedule: CurriculumSchedule, epoch: int) -> float:
    """Masking ratio for ``epoch``; constant within an epoch."""
    if not 0 <= epoch < schedule.total_epochs:
        raise EpochError(f"epoch {epoch} outside 0..{schedule.total_epochs - 1}")
    if schedule.kind == "fixed" or schedule.total_epochs == 1:
        return schedule.rho1
    return lerp(schedule.rho1, schedule.rho2, epoch / (schedule.total_epochs - 1))


@dataclass(frozen=True)
class BatchPlan:
    """Base batch ``B0`` scaled per epoch so that ``B_e * (1 - rho_e)`` stays level."""

    base_batch: int
    curriculum: CurriculumSchedule
    dataset_size: int
    adaptive: bool = True


def batch_size_at(plan: BatchPlan, epoch: int) -> int:
    rho = masking_ratio_at(plan.curriculum, epoch)
    if not plan.adaptive:
        return plan.base_batch
    scale = (1 - exact_decimal(plan.curriculum.min_ratio)) / (1 - exact_decimal(rho))
    return max(1, round(scale * plan.base_batch))


def steps_at(plan: BatchPlan, epoch: int) -> int:
    """``ceil(dataset / B_e)``, capped so no batch falls below two instances."""
    steps = math.ceil(plan.dataset_size / batch_size_at(plan, epoch))
    if plan.dataset_size >= 2:
        steps = min(steps, plan.dataset_size // 2)
    return steps


def lr_at(step: int, total_steps: int, base_lr: float, warmup_steps: int, min_lr: float) -> float:
    """Linear warmup from 0, then cosine decay reaching ``min_lr`` at the last step.

    Args:
        step: Zero-based optimizer step, ``0 <= step < total_steps``
        total_steps: Number of optimizer steps in the run
        base_lr: Peak rate, reached exactly at ``step == warmup_steps``
        warmup_steps: Length of the warmup ramp
        min_lr: Rate at ``step == total_steps - 1``

    Returns:
        Learning rate for ``step``
    """
    if not 0 <= step < total_steps:
        raise EpochError(f"step {step} outside 0..{total_steps - 1}")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    span = total_steps - 1 - warmup_steps
    progress = 1.0 if span <= 0 else (step - warmup_steps) / span
    weight = 0.5 * (1.0 + math.cos(math.pi * progress))
    return base_lr * weight + min_lr * (1.0 - weight)


@dataclass(frozen=True)
class EpochPlan:
    epoch: int
    mask_ratio: float
    batch_size: int
    steps: int
    first_step: int
    lr_start: float
    lr_end: float


@dataclass(frozen=True)
class TrainingPlan:
    """Per-epoch table plus the step-level learning-rate schedule."""

    epochs: tuple[EpochPlan, ...]
    base_batch: int
    base_lr: float
    min_lr: float
    warmup_steps: int
    lr_scale_with_batch: bool = False

    @property
    def total_steps(self) -> int:
        return sum(e.steps for e in self.epochs)

    def lr(self, step: int, batch_size: int) -> float:
        rate = lr_at(step, self.total_steps, self.base_lr, self.warmup_steps, self.min_lr)
        if self.lr_scale_with_batch:
            rate *= batch_size / self.base_batch
        return rate

    def rows(self) -> list[dict]:
        return [
            {
                "epoch": e.epoch,
                "mask_ratio": e.mask_ratio,
                "batch_size": e.batch_size,
                "steps": e.steps,
                "first_step": e.first_step,
                "lr_start": e.lr_start,
                "lr_end": e.lr_end,
            }
            for e in self.epochs
        ]


def build_epoch_plans(config: RunConfig) -> TrainingPlan:
    """Resolve curriculum, batch sizes, step counts and lr for every epoch.

    Warmup given in epochs becomes the summed step count of those epochs.
    """
    curriculum = CurriculumSchedule.from_config(config.curriculum, config.epochs)
    batches = BatchPlan(
        base_batch=config.batch.base_batch,
        curriculum=curriculum,
        dataset_size=config.data.dataset_size,
        adaptive=config.batch.adaptive,
    )
    shapes = [
        (masking_ratio_at(curriculum, e), batch_size_at(batches, e), steps_at(batches, e))
        for e in range(config.epochs)
    ]
    opt = config.optimizer
    warmup_steps = sum(steps for _, _, steps in shapes[: opt.warmup_epochs])
    total = sum(steps for _, _, steps in shapes)

    rows = []
    first = 0
    for e, (rho, batch, steps) in enumerate(shapes):
        scale = batch / config.batch.base_batch if opt.lr_scale_with_batch else 1.0
        start = lr_at(first, total, opt.base_lr, warmup_steps, opt.min_lr) * scale
        end = lr_at(first + steps - 1, total, opt.base_lr, warmup_steps, opt.min_lr) * scale
        rows.append(EpochPlan(e, rho, batch, steps, first, start, end))
        first += steps
    return TrainingPlan(
        epochs=tuple(rows),
        base_batch=config.batch.base_batch,
        base_lr=opt.base_lr,
        min_lr=opt.min_lr,
        warmup_steps=warmup_steps,
        lr_scale_with_batch=opt.lr_scale_with_batch,
    )


def split_batch(indices: np.ndarray, steps: int) -> list[np.ndarray]:
    """Split instances into at most ``steps`` consecutive batches whose sizes differ by at most one.

    The count is capped so that no batch holds fewer than two instances
    whenever there are at least two.
    """
    if steps < 1:
        raise EpochError(f"need at least one step, got {steps}")
    indices = np.asarray(indices)
    if len(indices) == 0:
        return []
    return np.array_split(indices, min(steps, max(1, len(indices) // 2)))
