"""Pydantic models for run configuration, FLOPS workloads and metrics records."""

from enum import StrEnum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.patching import GeometryError, PatchSpec, visible_count


class Mode(StrEnum):
    DIFFMAVIL = "diffmavil"
    MAVIL_BASELINE = "mavil_baseline"
    AUDIOMAE = "audiomae"
    AUDIOMAE_DIFFUSION = "audiomae_diffusion"

    @property
    def include_video(self) -> bool:
        return self in (Mode.DIFFMAVIL, Mode.MAVIL_BASELINE)

    @property
    def diffusion(self) -> bool:
        return self in (Mode.DIFFMAVIL, Mode.AUDIOMAE_DIFFUSION)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    """Encoder, fusion and decoder geometry."""

    enc_dim: int = Field(default=768, ge=4)
    enc_blocks: int = Field(default=12, ge=1)
    enc_heads: int = Field(default=12, ge=1)
    fusion_blocks: int = Field(default=2, ge=1)
    dec_dim: int = Field(default=512, ge=4)
    dec_blocks: int = Field(default=8, ge=1)
    dec_heads: int = Field(default=16, ge=1)
    mlp_ratio: int = Field(default=4, ge=1)
    video_attention: Literal["self", "cross"] = "cross"
    audio_attention: Literal["self", "local_window"] = "local_window"
    window: int = Field(default=16, ge=1)
    shifted_windows: bool = False
    diffusion_enabled: bool | None = Field(
        default=None, description="Filled from the run mode when omitted"
    )
    mask_then_project: bool = True
    cross_attention_direction: Literal["masked_queries", "visible_queries"] = "masked_queries"
    ln_eps: float = Field(default=1e-6, gt=0)
    init_std: float = Field(default=0.02, gt=0)
    patch_embed_init: Literal["trunc_normal", "xavier_uniform"] = "trunc_normal"

    @model_validator(mode="after")
    def check_dims(self) -> "ModelConfig":
        if self.enc_dim % self.enc_heads != 0:
            raise ValueError(f"enc_dim {self.enc_dim} is not divisible by enc_heads {self.enc_heads}")
        if self.dec_dim % self.dec_heads != 0:
            raise ValueError(f"dec_dim {self.dec_dim} is not divisible by dec_heads {self.dec_heads}")
        for name in ("enc_dim", "dec_dim"):
            if getattr(self, name) % 4 != 0:
                raise ValueError(f"{name} must be divisible by 4 for the positional tables")
        return self


class DataConfig(_Strict):
    """Input shapes, patch sizes and synthetic dataset size."""

    audio_shape: tuple[int, int] = (1024, 128)
    audio_patch: tuple[int, int] = (16, 16)
    video_frames: int = Field(default=16, ge=1)
    video_size: int = Field(default=224, ge=1)
    video_channels: int = Field(default=3, ge=1)
    video_temporal_patch: int = Field(default=2, ge=1)
    video_spatial_patch: int = Field(default=16, ge=1)
    dataset_size: int = Field(default=1_700_000, ge=2)
    eval_pairs: int = Field(default=64, ge=2)
    num_atoms: int = Field(default=3, ge=1)
    noise_std: float = Field(default=0.05, ge=0)

    @property
    def audio_spec(self) -> PatchSpec:
        return PatchSpec.audio(*self.audio_patch)

    @property
    def video_spec(self) -> PatchSpec:
        return PatchSpec.video(self.video_temporal_patch, self.video_spatial_patch, self.video_channels)

    @property
    def video_shape(self) -> tuple[int, int, int, int]:
        return (self.video_frames, self.video_size, self.video_size, self.video_channels)

    @property
    def audio_patches(self) -> int:
        t, f = self.audio_spec.grid_dims(self.audio_shape)
        return t * f

    @property
    def video_patches(self) -> int:
        t, h, w = self.video_spec.grid_dims(self.video_shape)
        return t * h * w


class CurriculumConfig(_Strict):
    kind: Literal["fixed", "linear"] = "fixed"
    rho1: float = Field(default=0.8, gt=0, lt=1)
    rho2: float | None = Field(default=None, gt=0, lt=1)

    @model_validator(mode="after")
    def check_endpoints(self) -> "CurriculumConfig":
        if self.kind == "linear" and self.rho2 is None:
            raise ValueError("a linear curriculum needs rho2")
        if self.kind == "fixed":
            if self.rho2 is not None and self.rho2 != self.rho1:
                raise ValueError(f"fixed curriculum has rho1={self.rho1} but rho2={self.rho2}")
            self.rho2 = self.rho1
        return self


class BatchConfig(_Strict):
    base_batch: int = Field(default=2048, ge=2)
    adaptive: bool = True
    micro_batch: int | None = Field(
        default=None, ge=2, description="Largest chunk per forward pass; gradients accumulate"
    )


class DiffusionConfig(_Strict):
    steps: int = Field(default=1000, ge=1)
    beta_start: float = Field(default=1e-4, gt=0, lt=1)
    beta_end: float = Field(default=0.02, gt=0, lt=1)
    phi: float = Field(default=0.8, gt=0)
    alpha_bar_uses_raw_beta: bool = False

    @model_validator(mode="after")
    def check_order(self) -> "DiffusionConfig":
        if self.beta_start > self.beta_end:
            raise ValueError(f"beta_start {self.beta_start} exceeds beta_end {self.beta_end}")
        return self


class OptimizerConfig(_Strict):
    """AdamW with cosine decay after a linear warmup."""

    base_lr: float = Field(default=4e-4, gt=0)
    min_lr: float = Field(default=1e-6, ge=0)
    warmup_epochs: int = Field(default=8, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.95, ge=0, lt=1)
    weight_decay: float = Field(default=1e-5, ge=0)
    eps: float = Field(default=1e-8, gt=0)
    lr_scale_with_batch: bool = False

    @model_validator(mode="after")
    def check_lr(self) -> "OptimizerConfig":
        if self.min_lr > self.base_lr:
            raise ValueError(f"min_lr {self.min_lr} exceeds base_lr {self.base_lr}")
        return self


class LossConfig(_Strict):
    temperature: float = Field(default=0.1, gt=0)
    lambda_inter: float = Field(default=0.01, ge=0)
    lambda_intra: float = Field(default=0.01, ge=0)
    mse_masked_only: bool = False


class RunConfig(_Strict):
    """Everything a pretraining run or a FLOPS evaluation needs."""

    mode: Mode = Mode.DIFFMAVIL
    model: ModelConfig = Field(default_factory=ModelConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    curriculum: CurriculumConfig = Field(default_factory=CurriculumConfig)
    batch: BatchConfig = Field(default_factory=BatchConfig)
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    epochs: int = Field(default=60, ge=1)
    seed: int = Field(default=0, ge=0)
    output_dir: str = "runs/diffmavil"
    max_steps: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def check_run(self) -> "RunConfig":
        if self.model.diffusion_enabled is None:
            self.model.diffusion_enabled = self.mode.diffusion
        # a diffusion mode may switch diffusion off and decode with the mask token
        elif self.model.diffusion_enabled and not self.mode.diffusion:
            raise ValueError(f"model.diffusion_enabled=True conflicts with mode '{self.mode}'")

        if not self.mode.include_video:
            if "lambda_inter" in self.loss.model_fields_set and self.loss.lambda_inter > 0:
                raise ValueError(f"loss.lambda_inter must be 0 in mode '{self.mode}' (no video branch)")
            self.loss.lambda_inter = 0.0

        if self.optimizer.warmup_epochs > self.epochs:
            raise ValueError(
                f"optimizer.warmup_epochs={self.optimizer.warmup_epochs} exceeds epochs={self.epochs}"
            )

        try:
            totals = {"data.audio_shape": self.data.audio_patches}
            if self.mode.include_video:
                totals["data.video_size"] = self.data.video_patches
        except GeometryError as e:
            raise ValueError(str(e)) from e

        for field, total in totals.items():
            for rho in (self.curriculum.rho1, self.curriculum.rho2):
                n_visible = visible_count(total, rho)
                if n_visible == 0 or n_visible == total:
                    raise ValueError(
                        f"{field}: {total} patches at mask ratio {rho} leave {n_visible} visible"
                    )
        return self

    @property
    def include_video(self) -> bool:
        return self.mode.include_video

    @property
    def diffusion_enabled(self) -> bool:
        return bool(self.model.diffusion_enabled)

    @property
    def views(self) -> int:
        """Masked views per modality: the second only feeds intra-modal contrast."""
        return 2 if self.loss.lambda_intra > 0 else 1


class WorkloadSpec(BaseModel):
    """Shapes and schedule that determine the analytic FLOPS of a run."""

    model_config = ConfigDict(frozen=True)

    audio_patches: int
    audio_patch_dim: int
    video_patches: int
    video_patch_dim: int
    enc_dim: int
    enc_blocks: int
    enc_heads: int
    fusion_blocks: int
    dec_dim: int
    dec_blocks: int
    dec_heads: int
    mlp_ratio: int = 4
    video_attention: Literal["self", "cross"]
    audio_attention: Literal["self", "local_window"]
    window: int
    diffusion_enabled: bool
    mask_then_project: bool
    include_video: bool = True
    views: int = Field(default=2, ge=1, le=2)
    mask_ratios: list[float]
    dataset_size: int

    @property
    def epochs(self) -> int:
        return len(self.mask_ratios)


class MetricsRecord(BaseModel):
    """One optimizer step, as written to the JSONL stream."""

    step: int
    epoch: int
    mask_ratio: float
    batch_size: int
    micro_batches: int
    lr: float
    mse_audio: float
    mse_video: float
    nce_inter: float
    nce_intra_audio: float
    nce_intra_video: float
    total: float
    cumulative_flops: float
    wall_seconds: float
