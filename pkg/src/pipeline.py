"""Pretraining orchestrator and post-training evaluation."""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from loguru import logger

from src.autodiff import NumericError, no_grad, ops
from src.config import MetricsRecord, RunConfig
from src.diffusion import build_schedule
from src.flops import MODULES, TRAIN_MULTIPLIER, flops_per_instance, workload_from_config
from src.logging_config import MetricsWriter, RunArtifacts
from src.losses import PairBatch, instance_embedding, stage1_objective
from src.model import DiffMavilModel, save_checkpoint
from src.optim import AdamW
from src.patching import Modality
from src.schedulers import EpochPlan, build_epoch_plans, split_batch
from src.seeding import stream
from src.synthetic import GenerationStats, SyntheticPair, generate_dataset

SHUFFLE_STREAM = 7
EVAL_SEED_OFFSET = 1_000_000_000


class DivergenceError(Exception):
    """Loss became non-finite; ``record`` holds the diagnostic snapshot."""

    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


@dataclass
class AlignmentReport:
    positive_cosine: float
    negative_cosine: float
    latent_r2: float

    @property
    def separated(self) -> bool:
        return self.positive_cosine > self.negative_cosine


@dataclass
class TrainResult:
    steps: int
    history: list[MetricsRecord]
    cumulative_flops: int
    checkpoint_path: Path | None = None
    stats: GenerationStats = field(default_factory=GenerationStats)

    @property
    def initial_mse(self) -> float:
        first = self.history[0]
        return first.mse_audio + first.mse_video

    @property
    def final_mse(self) -> float:
        """Mean reconstruction MSE over the last ten steps."""
        tail = self.history[-10:]
        return sum(r.mse_audio + r.mse_video for r in tail) / len(tail)


def _chunks(ids: np.ndarray, micro_batch: int | None) -> list[np.ndarray]:
    if micro_batch is None or len(ids) <= micro_batch:
        return [ids]
    return split_batch(ids, math.ceil(len(ids) / micro_batch))


class Pretrainer:
    """Runs stage-1 pretraining on synthetic pairs."""

    def __init__(
        self,
        config: RunConfig,
        artifacts: RunArtifacts | None = None,
        max_steps: int | None = None,
    ):
        """Initialize the trainer.

        Args:
            config: Validated run configuration
            artifacts: Output directory manager; nothing is written when omitted
            max_steps: Stop after this many optimizer steps (overrides the config)
        """
        self.config = config
        self.artifacts = artifacts
        self.max_steps = max_steps if max_steps is not None else config.max_steps
        self.plan = build_epoch_plans(config)
        self.workload = workload_from_config(config)
        self.schedule = None
        if config.diffusion_enabled:
            d = config.diffusion
            self.schedule = build_schedule(
                d.steps, d.beta_start, d.beta_end, d.phi, d.alpha_bar_uses_raw_beta
            )
        self.model = DiffMavilModel(config)
        opt = config.optimizer
        self.optimizer = AdamW(
            self.model.parameters(),
            lr=opt.base_lr,
            betas=(opt.beta1, opt.beta2),
            weight_decay=opt.weight_decay,
            eps=opt.eps,
        )
        self.stats = GenerationStats()
        self.cumulative_flops = 0
        self._pairs: list[SyntheticPair] | None = None
        self._metrics: MetricsWriter | None = None

    @property
    def pairs(self) -> list[SyntheticPair]:
        if self._pairs is None:
            start = time.perf_counter()
            self._pairs = generate_dataset(
                range(self.config.data.dataset_size),
                self.config.data,
                include_video=self.config.include_video,
                stats=self.stats,
            )
            logger.info(f"[TIMING] Dataset generated: {time.perf_counter() - start:.2f}s")
        return self._pairs

    def batch(self, ids: np.ndarray) -> PairBatch:
        data = self.config.data
        pairs = [self.pairs[i] for i in ids]
        video = [p.video for p in pairs] if self.config.include_video else None
        return PairBatch.from_arrays(
            ids, [p.audio for p in pairs], data.audio_spec, video, data.video_spec
        )

    def train_step(self, step: int, epoch: EpochPlan, ids: np.ndarray, started: float) -> MetricsRecord:
        """Forward and backward over micro-batches, then one AdamW update."""
        lr = self.plan.lr(step, epoch.batch_size)
        self.optimizer.zero_grad()
        chunks = _chunks(ids, self.config.batch.micro_batch)
        sums = dict.fromkeys(
            ("mse_audio", "mse_video", "nce_inter", "nce_intra_audio", "nce_intra_video", "total"), 0.0
        )
        for chunk in chunks:
            weight = len(chunk) / len(ids)
            try:
                breakdown = stage1_objective(
                    self.batch(chunk),
                    self.model,
                    epoch.mask_ratio,
                    self.config.loss,
                    self.schedule,
                    key=(self.config.seed, step),
                )
                values = breakdown.values()
                if not math.isfinite(values["total"]):
                    raise NumericError(f"total loss is {values['total']}")
                ops.scale(breakdown.total, weight).backward()
            except NumericError as e:
                self._diverged(step, epoch, lr, str(e))
            for name, value in values.items():
                sums[name] += weight * value

        self.optimizer.step(lr)
        per_instance = flops_per_instance(self.workload, epoch.mask_ratio)
        self.cumulative_flops += TRAIN_MULTIPLIER * len(ids) * sum(per_instance[m] for m in MODULES)
        return MetricsRecord(
            step=step,
            epoch=epoch.epoch,
            mask_ratio=epoch.mask_ratio,
            batch_size=len(ids),
            micro_batches=len(chunks),
            lr=lr,
            cumulative_flops=float(self.cumulative_flops),
            wall_seconds=time.perf_counter() - started,
            **sums,
        )

    def _diverged(self, step: int, epoch: EpochPlan, lr: float, reason: str) -> None:
        record = {
            "step": step,
            "epoch": epoch.epoch,
            "mask_ratio": epoch.mask_ratio,
            "lr": lr,
            "reason": reason,
            "grad_norm": self.optimizer.global_grad_norm(),
        }
        if self.artifacts is not None:
            self.artifacts.save_json("divergence", record)
        logger.error(f"Training diverged at step {step}: {reason}")
        raise DivergenceError(f"training diverged at step {step}: {reason}", record)

    def run(self) -> TrainResult:
        """Train over every epoch plan (or until ``max_steps``) and write the checkpoint."""
        started = time.perf_counter()
        logger.info(
            f"Pretraining {self.config.mode}: {len(self.plan.epochs)} epochs, "
            f"{self.plan.total_steps} steps, {self.model.num_parameters():,} parameters"
        )
        resolved = self.config.model_dump(mode="json")
        logger.info(f"Resolved config: {resolved}")
        if self.artifacts is not None:
            self.artifacts.save_json("config", resolved)
            self._metrics = self.artifacts.open_metrics()
        history: list[MetricsRecord] = []
        step = 0
        try:
            for epoch in self.plan.epochs:
                if self.max_steps is not None and step >= self.max_steps:
                    break
                epoch_start = time.perf_counter()
                order = stream(self.config.seed, SHUFFLE_STREAM, epoch.epoch).permutation(
                    self.config.data.dataset_size
                )
                for ids in split_batch(order, epoch.steps):
                    if self.max_steps is not None and step >= self.max_steps:
                        break
                    record = self.train_step(step, epoch, ids, started)
                    history.append(record)
                    if self._metrics is not None:
                        self._metrics.write(record)
                    logger.debug(
                        f"step {step} epoch {epoch.epoch} rho={epoch.mask_ratio:.3f} "
                        f"B={record.batch_size} lr={record.lr:.2e} loss={record.total:.4f}"
                    )
                    step += 1
                logger.info(
                    f"[TIMING] Epoch {epoch.epoch}: {time.perf_counter() - epoch_start:.2f}s "
                    f"(loss {history[-1].total:.4f})"
                )
        finally:
            self.close()

        checkpoint = None
        if self.artifacts is not None:
            checkpoint = save_checkpoint(
                self.artifacts.checkpoint_path, self.model, self.config.model_dump(mode="json")
            )
        logger.info(f"[TIMING] Pretraining total: {time.perf_counter() - started:.2f}s ({step} steps)")
        return TrainResult(
            steps=step,
            history=history,
            cumulative_flops=self.cumulative_flops,
            checkpoint_path=checkpoint,
            stats=self.stats,
        )

    def evaluate(self, count: int | None = None) -> AlignmentReport:
        count = self.config.data.eval_pairs if count is None else count
        if not self.config.include_video:
            raise ValueError("alignment evaluation needs the video branch")
        pairs = generate_dataset(
            range(EVAL_SEED_OFFSET, EVAL_SEED_OFFSET + count), self.config.data, stats=self.stats
        )
        return evaluate_alignment(self.model, pairs, self.config)

    def close(self) -> None:
        if self._metrics is not None:
            self._metrics.close()
            self._metrics = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def pooled_embeddings(
    model: DiffMavilModel, pairs: list[SyntheticPair], config: RunConfig
) -> dict[Modality, np.ndarray]:
    """Sequence-mean encoder features of fully visible inputs, ``[n x d]`` per modality."""
    batch = PairBatch.from_arrays(
        [p.latent.seed for p in pairs],
        [p.audio for p in pairs],
        config.data.audio_spec,
        [p.video for p in pairs] if model.include_video else None,
        config.data.video_spec,
    )
    grids = {Modality.AUDIO: batch.audio}
    if batch.video is not None:
        grids[Modality.VIDEO] = batch.video
    with no_grad():
        return {m: instance_embedding(model.encode_full(m, g)).data for m, g in grids.items()}


def _latent_r2(features: np.ndarray, target: np.ndarray, components: int = 4) -> float:
    """Out-of-sample R^2 of a linear fit on the leading principal components."""
    half = len(target) // 2
    fit_x, test_x = features[:half], features[half:]
    mean = fit_x.mean(axis=0)
    _, _, vt = np.linalg.svd(fit_x - mean, full_matrices=False)
    basis = vt[:components].T

    def design(x):
        projected = (x - mean) @ basis
        return np.hstack([projected, np.ones((len(x), 1))])

    coef, *_ = np.linalg.lstsq(design(fit_x), target[:half], rcond=None)
    residual = target[half:] - design(test_x) @ coef
    spread = target[half:] - target[half:].mean()
    return float(1.0 - (residual @ residual) / (spread @ spread))


def evaluate_alignment(model: DiffMavilModel, pairs: list[SyntheticPair], config: RunConfig) -> AlignmentReport:
    """Cosine similarity of matched vs mismatched audio-video embeddings, plus a linear fit of the latent."""
    emb = pooled_embeddings(model, pairs, config)
    a = emb[Modality.AUDIO] / np.linalg.norm(emb[Modality.AUDIO], axis=1, keepdims=True)
    v = emb[Modality.VIDEO] / np.linalg.norm(emb[Modality.VIDEO], axis=1, keepdims=True)
    sims = a @ v.T
    n = len(pairs)
    positive = float(np.trace(sims) / n)
    negative = float((sims.sum() - np.trace(sims)) / (n * (n - 1)))
    target = np.array([p.latent.z[0] for p in pairs])
    r2 = _latent_r2(np.hstack([emb[Modality.AUDIO], emb[Modality.VIDEO]]), target)
    logger.info(f"Alignment: positive cosine {positive:.4f}, negative {negative:.4f}, latent R^2 {r2:.3f}")
    return AlignmentReport(positive_cosine=positive, negative_cosine=negative, latent_r2=r2)
