"""Exponentiated linear variance schedule and the forward diffusion process."""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from src.autodiff import Tensor
from src.seeding import SeedLike, as_generator


class ScheduleConfigError(Exception):
    """Schedule parameters are out of range."""

    pass


class StepError(Exception):
    """Diffusion step outside ``1..T``."""

    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance schedule with arrays indexed by ``t - 1``.

    The noise actually injected at step ``t`` is ``beta_eff[t-1] = beta^phi``;
    ``alpha_bar`` is the running product of ``1 - beta_eff`` unless the
    schedule was built with ``alpha_bar_uses_raw_beta``.
    """

    steps: int
    phi: float
    beta: np.ndarray
    beta_eff: np.ndarray
    alpha_bar: np.ndarray
    alpha_bar_uses_raw_beta: bool = False

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.steps:
            raise StepError(f"diffusion step {t} outside 1..{self.steps}")

    def alpha_bar_at(self, t: int) -> float:
        self.check_step(t)
        return float(self.alpha_bar[t - 1])

    def diffuse(
        self,
        x0: np.ndarray | Tensor,
        t: int,
        seed: SeedLike,
        noise: np.ndarray | None = None,
    ) -> Tensor:
        """Sample ``x_t = sqrt(a_t) x0 + sqrt(1 - a_t) eps`` (one draw per element).

        Args:
            x0: Clean patches ``[n x p]``
            t: Step in ``1..T``
            seed: Seed or generator for ``eps``
            noise: Forced ``eps`` (test hook); ``seed`` is ignored when given

        Returns:
            Constant tensor shaped like ``x0``
        """
        self.check_step(t)
        data = x0.data if isinstance(x0, Tensor) else np.asarray(x0, dtype=np.float64)
        if noise is None:
            noise = as_generator(seed).standard_normal(data.shape)
        elif noise.shape != data.shape:
            raise ScheduleConfigError(f"forced noise shape {noise.shape} != input shape {data.shape}")
        a = self.alpha_bar[t - 1]
        return Tensor(np.sqrt(a) * data + np.sqrt(1.0 - a) * noise)

    def diffuse_batch(
        self,
        x0: np.ndarray,
        steps: np.ndarray,
        seeds: Sequence[SeedLike],
    ) -> np.ndarray:
        """Diffuse ``x0 [B x n x p]`` with its own step and noise stream per instance.

        Row ``b`` equals ``diffuse(x0[b], steps[b], seeds[b])``, so an instance
        draws the same noise whatever batch it lands in.
        """
        steps = np.asarray(steps, dtype=np.int64)
        if steps.shape != (x0.shape[0],):
            raise StepError(f"need one step per instance, got {steps.shape} for batch {x0.shape[0]}")
        if len(seeds) != x0.shape[0]:
            raise ScheduleConfigError(f"need one seed per instance, got {len(seeds)} for batch {x0.shape[0]}")
        if steps.min() < 1 or steps.max() > self.steps:
            raise StepError(f"diffusion steps must lie in 1..{self.steps}, got {steps.tolist()}")
        a = self.alpha_bar[steps - 1][:, None, None]
        eps = np.stack([as_generator(s).standard_normal(x0.shape[1:]) for s in seeds])
        return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def build_schedule(
    steps: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    phi: float = 0.8,
    alpha_bar_uses_raw_beta: bool = False,
) -> DiffusionSchedule:
    """Linear ``beta`` from ``beta_start`` to ``beta_end``, both endpoints exact.

    A single-step schedule holds only ``beta_start``.
    """
    if steps < 1:
        raise ScheduleConfigError(f"need at least one diffusion step, got {steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleConfigError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )
    if phi <= 0:
        raise ScheduleConfigError(f"phi must be positive, got {phi}")

    beta = np.array([beta_start]) if steps == 1 else np.linspace(beta_start, beta_end, steps)
    beta_eff = beta**phi
    if not ((beta_eff > 0) & (beta_eff < 1)).all():
        raise ScheduleConfigError(f"beta^phi leaves (0, 1) for phi={phi}")
    factors = 1.0 - (beta if alpha_bar_uses_raw_beta else beta_eff)
    return DiffusionSchedule(
        steps=steps,
        phi=phi,
        beta=beta,
        beta_eff=beta_eff,
        alpha_bar=np.cumprod(factors),
        alpha_bar_uses_raw_beta=alpha_bar_uses_raw_beta,
    )


def diffuse(
    schedule: DiffusionSchedule,
    x0: np.ndarray | Tensor,
    t: int,
    seed: SeedLike,
    noise: np.ndarray | None = None,
) -> Tensor:
    return schedule.diffuse(x0, t, seed, noise=noise)


def sample_timestep(steps: int, seed: SeedLike) -> int:
    """Uniform draw from ``{1, ..., steps}``."""
    if steps < 1:
        raise ScheduleConfigError(f"need at least one diffusion step, got {steps}")
    return int(as_generator(seed).integers(1, steps + 1))


def sample_timesteps(steps: int, seeds: Sequence[SeedLike]) -> np.ndarray:
    """One uniform draw from ``{1, ..., steps}`` per seed."""
    if steps < 1:
        raise ScheduleConfigError(f"need at least one diffusion step, got {steps}")
    return np.array([sample_timestep(steps, s) for s in seeds], dtype=np.int64)
