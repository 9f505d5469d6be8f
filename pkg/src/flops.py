"""Analytic FLOPS accounting for encoders, fusion and decoders.

A multiply-accumulate counts as 2 FLOPS. LayerNorm, softmax, GELU and
residual adds are counted at first order with the constants below.
"""

from loguru import logger
from pydantic import BaseModel

from src.config import RunConfig, WorkloadSpec
from src.patching import visible_count
from src.schedulers import CurriculumSchedule

LAYERNORM = 5
SOFTMAX = 5
GELU = 8
RESIDUAL = 1
# backward pass costs about twice the forward pass
TRAIN_MULTIPLIER = 3

MODULES = ("audio_encoder", "audio_decoder", "video_encoder", "video_decoder", "fusion_encoder")
MODULE_TITLES = {
    "audio_encoder": "Audio Encoder",
    "audio_decoder": "Audio Decoder",
    "video_encoder": "Video Encoder",
    "video_decoder": "Video Decoder",
    "fusion_encoder": "Fusion Encoder",
    "total": "Total",
}


class WorkloadError(Exception):
    """Dimensions passed to the cost model are invalid."""

    pass


class ReportError(Exception):
    """Reports cannot be compared."""

    pass


def flops_matmul(m: int, n: int, p: int) -> int:
    return 2 * m * n * p


def _attention_pairs(length: int, window: int) -> int:
    full, rest = divmod(length, window)
    return full * window * window + rest * rest


def flops_transformer_block(
    q: int,
    kv: int,
    d: int,
    heads: int,
    kind: str = "self",
    window: int | None = None,
    mlp_ratio: int = 4,
) -> int:
    """Forward FLOPS of one pre-norm block.

    Args:
        q: Query sequence length
        kv: Key/value sequence length (equal to ``q`` unless ``kind == "cross"``)
        d: Model width
        heads: Attention heads
        kind: ``"self"``, ``"cross"`` or ``"local"``
        window: Window length for ``"local"``
        mlp_ratio: MLP expansion

    Returns:
        FLOPS count
    """
    if min(q, kv, d, heads) < 1:
        raise WorkloadError(f"block dims must be positive, got q={q}, kv={kv}, d={d}, heads={heads}")
    flops = LAYERNORM * q * d
    if kind == "cross":
        flops += LAYERNORM * kv * d
        flops += flops_matmul(q, d, d) + flops_matmul(kv, d, 2 * d)
        pairs = q * kv
    elif kind in ("self", "local"):
        if kv != q:
            raise WorkloadError(f"{kind} attention needs q == kv, got {q} and {kv}")
        flops += flops_matmul(q, d, 3 * d)
        if kind == "local":
            if window is None or window < 1:
                raise WorkloadError(f"local attention needs a positive window, got {window}")
            pairs = _attention_pairs(q, window)
        else:
            pairs = q * q
    else:
        raise WorkloadError(f"unknown attention kind '{kind}'")

    # QK^T and AV, then softmax per head
    flops += 4 * pairs * d + SOFTMAX * heads * pairs
    flops += flops_matmul(q, d, d) + RESIDUAL * q * d

    hidden = mlp_ratio * d
    flops += LAYERNORM * q * d
    flops += flops_matmul(q, d, hidden) + GELU * hidden * q + flops_matmul(q, hidden, d)
    flops += RESIDUAL * q * d
    return flops


def _encoder(spec: WorkloadSpec, total: int, patch_dim: int, visible: int) -> tuple[int, int]:
    """(FLOPS, projection FLOPS) of every view of one modality."""
    d = spec.enc_dim
    per_view = spec.enc_blocks * flops_transformer_block(visible, visible, d, spec.enc_heads, mlp_ratio=spec.mlp_ratio)
    # positional add and final norm
    per_view += RESIDUAL * visible * d + LAYERNORM * visible * d
    if spec.mask_then_project:
        projection = spec.views * flops_matmul(visible, patch_dim, d)
    else:
        projection = flops_matmul(total, patch_dim, d)
    return spec.views * per_view + projection, projection


def _decoder(spec: WorkloadSpec, total: int, patch_dim: int, visible: int, attention: str) -> tuple[int, int]:
    dd = spec.dec_dim
    masked = total - visible
    projection = flops_matmul(visible, spec.enc_dim, dd)
    if spec.diffusion_enabled:
        projection += flops_matmul(masked, patch_dim, dd)
    flops = projection + RESIDUAL * total * dd
    if attention == "cross":
        block = flops_transformer_block(masked, visible, dd, spec.dec_heads, "cross", mlp_ratio=spec.mlp_ratio)
    elif attention == "local_window":
        block = flops_transformer_block(total, total, dd, spec.dec_heads, "local", spec.window, spec.mlp_ratio)
    else:
        block = flops_transformer_block(total, total, dd, spec.dec_heads, mlp_ratio=spec.mlp_ratio)
    flops += spec.dec_blocks * block
    head = flops_matmul(total, dd, patch_dim)
    flops += LAYERNORM * total * dd + head
    return flops, projection + head


def flops_per_instance(spec: WorkloadSpec, mask_ratio: float) -> dict[str, int]:
    """Forward FLOPS per module for one instance at ``mask_ratio``, plus ``projections``."""
    counts = dict.fromkeys(MODULES, 0)
    v_audio = visible_count(spec.audio_patches, mask_ratio)
    counts["audio_encoder"], p_ae = _encoder(spec, spec.audio_patches, spec.audio_patch_dim, v_audio)
    counts["audio_decoder"], p_ad = _decoder(
        spec, spec.audio_patches, spec.audio_patch_dim, v_audio, spec.audio_attention
    )
    projections = p_ae + p_ad
    if spec.include_video:
        v_video = visible_count(spec.video_patches, mask_ratio)
        counts["video_encoder"], p_ve = _encoder(spec, spec.video_patches, spec.video_patch_dim, v_video)
        counts["video_decoder"], p_vd = _decoder(
            spec, spec.video_patches, spec.video_patch_dim, v_video, spec.video_attention
        )
        fused = v_audio + v_video
        counts["fusion_encoder"] = spec.fusion_blocks * flops_transformer_block(
            fused, fused, spec.enc_dim, spec.enc_heads, mlp_ratio=spec.mlp_ratio
        ) + LAYERNORM * fused * spec.enc_dim
        projections += p_ve + p_vd
    counts["projections"] = projections
    return counts


def visible_tokens_per_instance(spec: WorkloadSpec, mask_ratio: float) -> dict[str, int]:
    """Encoder tokens per instance over all views (the linear-dominant cost driver)."""
    tokens = {"audio_encoder": spec.views * visible_count(spec.audio_patches, mask_ratio), "video_encoder": 0}
    if spec.include_video:
        tokens["video_encoder"] = spec.views * visible_count(spec.video_patches, mask_ratio)
    return tokens


class FlopsReport(BaseModel):
    """Training FLOPS of a whole pretraining run, per module and per epoch."""

    name: str
    modules: dict[str, int]
    projections: int
    per_epoch: list[dict[str, int]]
    visible_tokens: dict[str, int]
    total: int


def workload_from_config(config: RunConfig) -> WorkloadSpec:
    cfg = config.model
    data = config.data
    curriculum = CurriculumSchedule.from_config(config.curriculum, config.epochs)
    video_patches = data.video_patches if config.include_video else 0
    return WorkloadSpec(
        audio_patches=data.audio_patches,
        audio_patch_dim=data.audio_spec.patch_dim,
        video_patches=video_patches,
        video_patch_dim=data.video_spec.patch_dim,
        enc_dim=cfg.enc_dim,
        enc_blocks=cfg.enc_blocks,
        enc_heads=cfg.enc_heads,
        fusion_blocks=cfg.fusion_blocks,
        dec_dim=cfg.dec_dim,
        dec_blocks=cfg.dec_blocks,
        dec_heads=cfg.dec_heads,
        mlp_ratio=cfg.mlp_ratio,
        video_attention=cfg.video_attention,
        audio_attention=cfg.audio_attention,
        window=cfg.window,
        diffusion_enabled=config.diffusion_enabled,
        mask_then_project=cfg.mask_then_project,
        include_video=config.include_video,
        views=config.views,
        mask_ratios=curriculum.table,
        dataset_size=data.dataset_size,
    )


def flops_pretraining(spec: WorkloadSpec, name: str = "run") -> FlopsReport:
    """Integrate per-instance training FLOPS over every epoch's masking ratio.

    Each epoch processes the whole dataset once, so the batch size does not
    enter the count.
    """
    modules = dict.fromkeys(MODULES, 0)
    tokens = {"audio_encoder": 0, "video_encoder": 0}
    projections = 0
    per_epoch = []
    for rho in spec.mask_ratios:
        counts = flops_per_instance(spec, rho)
        epoch = {m: TRAIN_MULTIPLIER * spec.dataset_size * counts[m] for m in MODULES}
        for m in MODULES:
            modules[m] += epoch[m]
        projections += TRAIN_MULTIPLIER * spec.dataset_size * counts["projections"]
        for m, n in visible_tokens_per_instance(spec, rho).items():
            tokens[m] += spec.dataset_size * n
        epoch["total"] = sum(epoch[m] for m in MODULES)
        per_epoch.append(epoch)
    report = FlopsReport(
        name=name,
        modules=modules,
        projections=projections,
        per_epoch=per_epoch,
        visible_tokens=tokens,
        total=sum(modules.values()),
    )
    logger.debug(f"{name}: {report.total:.3e} training FLOPS over {spec.epochs} epochs")
    return report


class FlopsComparison(BaseModel):
    """Candidate-over-baseline ratios per module; ``None`` where the baseline has no cost."""

    candidate: str
    baseline: str
    ratios: dict[str, float | None]
    linear_encoder_ratios: dict[str, float | None]

    @property
    def total_ratio(self) -> float:
        return self.ratios["total"]

    @property
    def flops_reduction(self) -> float:
        return 1.0 - self.total_ratio


def _ratio(a: int, b: int) -> float | None:
    if b == 0:
        return 1.0 if a == 0 else None
    return a / b


def flops_compare(report: FlopsReport, baseline: FlopsReport) -> FlopsComparison:
    if set(report.modules) != set(baseline.modules):
        raise ReportError(
            f"module taxonomies differ: {sorted(report.modules)} vs {sorted(baseline.modules)}"
        )
    ratios = {m: _ratio(report.modules[m], baseline.modules[m]) for m in report.modules}
    ratios["total"] = _ratio(report.total, baseline.total)
    linear = {
        m: _ratio(report.visible_tokens[m], baseline.visible_tokens[m]) for m in report.visible_tokens
    }
    return FlopsComparison(
        candidate=report.name, baseline=baseline.name, ratios=ratios, linear_encoder_ratios=linear
    )


def render_ratio_table(comparison: FlopsComparison) -> str:
    """Plain-text table with one column per module and a total."""
    keys = [*MODULES, "total"]
    widths = [max(len(MODULE_TITLES[k]), 7) for k in keys]
    header = " | ".join(MODULE_TITLES[k].ljust(w) for k, w in zip(keys, widths))

    def cell(value: float | None) -> str:
        return "n/a" if value is None else f"{value:.2f}x"

    row = " | ".join(cell(comparison.ratios[k]).ljust(w) for k, w in zip(keys, widths))
    title = f"{comparison.candidate} vs {comparison.baseline}"
    rule = "-" * len(header)
    return "\n".join([title, rule, header, rule, row, rule])
