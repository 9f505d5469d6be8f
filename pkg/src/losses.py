"""Stage-1 objective: patchwise MSE plus inter- and intra-modal InfoNCE."""

from dataclasses import dataclass, field

import numpy as np

from src.autodiff import ContractError, Tensor, ops
from src.config import LossConfig
from src.diffusion import DiffusionSchedule, sample_timesteps
from src.model import DiffMavilModel
from src.patching import (
    BatchedPlan,
    Modality,
    PatchGrid,
    PatchSpec,
    gather_masked,
    make_masking_plan,
    patchify,
    stack_grids,
)
from src.seeding import stream

# Purposes for per-instance random streams
VIEW_STREAMS = {Modality.AUDIO: (0, 1), Modality.VIDEO: (2, 3)}
TIMESTEP_STREAM = 4
NOISE_STREAMS = {Modality.AUDIO: 5, Modality.VIDEO: 6}


class DegenerateBatchError(Exception):
    """Contrastive loss needs at least two instances."""

    pass


def _zero() -> Tensor:
    return Tensor(np.asarray(0.0))


@dataclass
class LossBreakdown:
    """Loss terms of one step; terms a mode does not use are constant zeros."""

    mse_audio: Tensor
    mse_video: Tensor
    nce_inter: Tensor
    nce_intra_audio: Tensor
    nce_intra_video: Tensor
    total: Tensor
    weights: dict[str, float] = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        return {
            "mse_audio": self.mse_audio.item(),
            "mse_video": self.mse_video.item(),
            "nce_inter": self.nce_inter.item(),
            "nce_intra_audio": self.nce_intra_audio.item(),
            "nce_intra_video": self.nce_intra_video.item(),
            "total": self.total.item(),
        }

    @property
    def mse(self) -> float:
        return self.mse_audio.item() + self.mse_video.item()


@dataclass
class PairBatch:
    """Stacked audio (and optionally video) patches of a batch of instances."""

    ids: np.ndarray
    audio: PatchGrid
    video: PatchGrid | None = None

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_arrays(
        cls,
        ids,
        audio: list[np.ndarray],
        audio_spec: PatchSpec,
        video: list[np.ndarray] | None = None,
        video_spec: PatchSpec | None = None,
    ) -> "PairBatch":
        audio_grid = stack_grids([patchify(x, audio_spec) for x in audio])
        video_grid = None
        if video is not None:
            video_grid = stack_grids([patchify(x, video_spec) for x in video])
        return cls(np.asarray(ids, dtype=np.int64), audio_grid, video_grid)


def instance_embedding(um: Tensor) -> Tensor:
    """Average over the sequence axis: ``[B x V x d] -> [B x d]``."""
    return ops.mean(um, axis=um.ndim - 2)


def reconstruction_error(recon: Tensor, target: Tensor, rows: np.ndarray | None = None) -> Tensor:
    """Mean squared error per element, optionally over selected patch rows only."""
    if recon.shape != target.shape:
        raise ContractError(f"reconstruction {recon.shape} does not match target {target.shape}")
    if rows is not None:
        recon = ops.gather_rows(recon, rows)
        target = ops.gather_rows(target, rows)
    return ops.mean(ops.square(ops.sub(recon, target)))


def mse_loss(
    recon_a: Tensor,
    target_a: Tensor,
    recon_v: Tensor | None = None,
    target_v: Tensor | None = None,
) -> Tensor:
    """Audio plus video reconstruction error; a missing video pair counts as zero."""
    loss = reconstruction_error(recon_a, target_a)
    if (recon_v is None) != (target_v is None):
        raise ContractError("video reconstruction and target must be given together")
    if recon_v is not None:
        loss = ops.add(loss, reconstruction_error(recon_v, target_v))
    return loss


def info_nce(emb_x: Tensor, emb_y: Tensor, temperature: float = 0.1) -> Tensor:
    """Symmetric InfoNCE over cosine similarities; row ``i`` of each side is a positive pair.

    Args:
        emb_x: ``[B x d]`` embeddings
        emb_y: ``[B x d]`` embeddings paired row-by-row with ``emb_x``
        temperature: Logit divisor

    Returns:
        Mean of the x-to-y and y-to-x cross-entropies
    """
    if emb_x.shape != emb_y.shape or emb_x.ndim != 2:
        raise ContractError(f"info_nce needs two [B x d] inputs, got {emb_x.shape} and {emb_y.shape}")
    batch = emb_x.shape[0]
    if batch < 2:
        raise DegenerateBatchError(f"info_nce needs at least 2 instances, got {batch}")
    if temperature <= 0:
        raise ContractError(f"temperature must be > 0, got {temperature}")

    x = ops.l2_normalize(emb_x)
    y = ops.l2_normalize(emb_y)
    logits = ops.scale(ops.matmul(x, ops.transpose(y)), 1.0 / temperature)
    diagonal = Tensor(np.eye(batch))
    x_to_y = ops.sum(ops.mul(ops.log_softmax(logits, axis=1), diagonal))
    y_to_x = ops.sum(ops.mul(ops.log_softmax(logits, axis=0), diagonal))
    return ops.scale(ops.add(x_to_y, y_to_x), -0.5 / batch)


def _plans(batch: PairBatch, modality: Modality, total: int, mask_ratio: float, views: int, key) -> list[BatchedPlan]:
    return [
        BatchedPlan(
            tuple(
                make_masking_plan(total, mask_ratio, stream(*key, int(i), VIEW_STREAMS[modality][view]))
                for i in batch.ids
            )
        )
        for view in range(views)
    ]


def _diffused(
    grid: PatchGrid,
    plan: BatchedPlan,
    schedule: DiffusionSchedule,
    steps: np.ndarray,
    ids: np.ndarray,
    modality: Modality,
    key,
) -> Tensor:
    clean = gather_masked(grid, plan).data
    seeds = [stream(*key, int(i), NOISE_STREAMS[modality]) for i in ids]
    return Tensor(schedule.diffuse_batch(clean, steps, seeds))


def stage1_objective(
    batch: PairBatch,
    model: DiffMavilModel,
    mask_ratio: float,
    loss_cfg: LossConfig,
    schedule: DiffusionSchedule | None = None,
    key: tuple[int, ...] = (0,),
) -> LossBreakdown:
    """Two masked views per modality, fusion and decoding of view one, and the weighted loss.

    Args:
        batch: Paired instances; ``batch.video`` is ``None`` in audio-only modes
        model: Model whose parameters receive gradients
        mask_ratio: Ratio used for every plan of this step
        loss_cfg: Temperature, weights and the masked-only MSE flag
        schedule: Variance schedule, required when the model diffuses masked patches
        key: Prefix of every per-instance random stream, e.g. ``(seed, step)``

    Returns:
        Breakdown whose ``total`` is ready for ``backward()``
    """
    if model.diffusion and schedule is None:
        raise ContractError("a diffusion model needs a variance schedule")
    has_video = batch.video is not None
    if has_video != model.include_video:
        raise ContractError("batch and model disagree on whether video is present")
    views = 2 if loss_cfg.lambda_intra > 0 else 1

    grids = {Modality.AUDIO: batch.audio}
    if has_video:
        grids[Modality.VIDEO] = batch.video

    # Step 1: mask every view and encode its visible patches
    plans: dict[Modality, list[BatchedPlan]] = {}
    latents: dict[Modality, list[Tensor]] = {}
    for modality, grid in grids.items():
        plans[modality] = _plans(batch, modality, grid.num_patches, mask_ratio, views, key)
        embedded = None if model.mask_then_project else model.embed_all(modality, grid)
        latents[modality] = [model.encode(modality, grid, plan, embedded) for plan in plans[modality]]

    # Step 2: fuse the first views across modalities
    if has_video:
        mm = dict(zip(grids, model.fuse(latents[Modality.AUDIO][0], latents[Modality.VIDEO][0])))
    else:
        mm = {Modality.AUDIO: latents[Modality.AUDIO][0]}

    # Step 3: one diffusion step per instance, shared by both modalities
    steps = None
    if model.diffusion:
        steps = sample_timesteps(schedule.steps, [stream(*key, int(i), TIMESTEP_STREAM) for i in batch.ids])

    # Step 4: decode the first view and score the reconstruction
    mse: dict[Modality, Tensor] = {}
    for modality, grid in grids.items():
        plan = plans[modality][0]
        masked = None
        if model.diffusion:
            masked = _diffused(grid, plan, schedule, steps, batch.ids, modality, key)
        recon = model.decode(modality, mm[modality], masked, plan)
        rows = plan.masked_indices if loss_cfg.mse_masked_only else None
        mse[modality] = reconstruction_error(recon, grid.patches, rows)

    # Step 5: contrast pooled uni-modal latents across modalities and across views
    emb = {m: [instance_embedding(u) for u in us] for m, us in latents.items()}
    nce_inter = _zero()
    if has_video:
        nce_inter = info_nce(emb[Modality.AUDIO][0], emb[Modality.VIDEO][0], loss_cfg.temperature)
    intra = {m: _zero() for m in (Modality.AUDIO, Modality.VIDEO)}
    if views == 2:
        for modality, (first, second) in emb.items():
            intra[modality] = info_nce(first, second, loss_cfg.temperature)

    # Step 6: weighted total
    mse_video = mse.get(Modality.VIDEO, _zero())
    total = ops.add(mse[Modality.AUDIO], mse_video)
    total = ops.add(total, ops.scale(nce_inter, loss_cfg.lambda_inter))
    total = ops.add(total, ops.scale(ops.add(intra[Modality.AUDIO], intra[Modality.VIDEO]), loss_cfg.lambda_intra))
    return LossBreakdown(
        mse_audio=mse[Modality.AUDIO],
        mse_video=mse_video,
        nce_inter=nce_inter,
        nce_intra_audio=intra[Modality.AUDIO],
        nce_intra_video=intra[Modality.VIDEO],
        total=total,
        weights={"lambda_inter": loss_cfg.lambda_inter, "lambda_intra": loss_cfg.lambda_intra},
    )
