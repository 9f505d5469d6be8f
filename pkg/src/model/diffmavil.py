"""Audio and video encoders, fusion encoder and reconstruction decoders."""

import numpy as np
from loguru import logger

from src.autodiff import ContractError, Module, Parameter, Tensor, ops, trunc_normal
from src.config import ModelConfig, RunConfig
from src.model.layers import LayerNorm, Linear, TransformerBlock
from src.model.positional import PositionalEmbedding
from src.patching import (
    DegeneratePlanError,
    Modality,
    PatchGrid,
    PatchSpec,
    PlanError,
    PlanLike,
    gather_visible,
    restore_order,
)
from src.seeding import stream

INIT_STREAM = 1


def _positions(table: PositionalEmbedding, indices: np.ndarray) -> Tensor:
    return Tensor(table.rows(indices))


class Encoder(Module):
    """Patch embedding plus positional table, self-attention blocks and a final norm."""

    def __init__(
        self,
        patch_dim: int,
        positional: PositionalEmbedding,
        cfg: ModelConfig,
        rng: np.random.Generator,
    ):
        self.embed = Linear(patch_dim, cfg.enc_dim, rng, std=cfg.init_std, init=cfg.patch_embed_init)
        self.blocks = [
            TransformerBlock(cfg.enc_dim, cfg.enc_heads, rng, mlp_ratio=cfg.mlp_ratio, eps=cfg.ln_eps, std=cfg.init_std)
            for _ in range(cfg.enc_blocks)
        ]
        self.norm = LayerNorm(cfg.enc_dim, cfg.ln_eps)
        self.positional = positional

    def embed_patches(self, patches: Tensor, positions: np.ndarray) -> Tensor:
        return ops.add(self.embed(patches), _positions(self.positional, positions))

    def encode_tokens(self, tokens: Tensor) -> Tensor:
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens)

    def forward(self, patches: Tensor, positions: np.ndarray) -> Tensor:
        return self.encode_tokens(self.embed_patches(patches, positions))


class FusionEncoder(Module):
    """Joint transformer over concatenated audio and video latents."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.blocks = [
            TransformerBlock(cfg.enc_dim, cfg.enc_heads, rng, mlp_ratio=cfg.mlp_ratio, eps=cfg.ln_eps, std=cfg.init_std)
            for _ in range(cfg.fusion_blocks)
        ]
        self.norm = LayerNorm(cfg.enc_dim, cfg.ln_eps)

    def forward(self, a_um: Tensor, v_um: Tensor) -> tuple[Tensor, Tensor]:
        axis = a_um.ndim - 2
        n_audio, n_video = a_um.shape[axis], v_um.shape[axis]
        if n_audio < 1 or n_video < 1:
            raise ContractError(f"fusion needs nonempty sequences, got {n_audio} and {n_video}")
        x = ops.concat([a_um, v_um], axis=axis)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return ops.slice(x, axis, 0, n_audio), ops.slice(x, axis, n_audio, n_audio + n_video)


class Decoder(Module):
    """Rebuilds every patch of one modality from the visible latents.

    Masked positions enter either as a learnable mask token or, with
    diffusion enabled, as diffused raw patches projected to ``dec_dim``.
    """

    def __init__(
        self,
        patch_dim: int,
        positional: PositionalEmbedding,
        cfg: ModelConfig,
        attention: str,
        rng: np.random.Generator,
    ):
        self.attention = attention
        self.diffusion = bool(cfg.diffusion_enabled)
        self.direction = cfg.cross_attention_direction
        self.positional = positional
        self.embed = Linear(cfg.enc_dim, cfg.dec_dim, rng, std=cfg.init_std)
        if self.diffusion:
            self.masked_embed = Linear(patch_dim, cfg.dec_dim, rng, std=cfg.init_std, init=cfg.patch_embed_init)
        else:
            self.mask_token = Parameter(trunc_normal(rng, (cfg.dec_dim,), cfg.init_std))

        kind = {"self": "self", "cross": "cross", "local_window": "local"}[attention]
        self.blocks = [
            TransformerBlock(
                cfg.dec_dim,
                cfg.dec_heads,
                rng,
                kind=kind,
                mlp_ratio=cfg.mlp_ratio,
                eps=cfg.ln_eps,
                window=cfg.window if kind == "local" else None,
                shift=cfg.window // 2 if kind == "local" and cfg.shifted_windows and i % 2 == 1 else 0,
                std=cfg.init_std,
            )
            for i in range(cfg.dec_blocks)
        ]
        self.norm = LayerNorm(cfg.dec_dim, cfg.ln_eps)
        self.head = Linear(cfg.dec_dim, patch_dim, rng, std=cfg.init_std)

    def mask_tokens(self, masked_patches: Tensor | None, plan: PlanLike) -> Tensor:
        """Decoder-space inputs for the masked positions."""
        pos = _positions(self.positional, plan.masked_indices)
        if not self.diffusion:
            return ops.add(pos, self.mask_token)
        if masked_patches is None:
            raise ContractError("diffusion decoding needs the diffused masked patches")
        return ops.add(self.masked_embed(masked_patches), pos)

    def forward(self, latent: Tensor, masked_patches: Tensor | None, plan: PlanLike) -> Tensor:
        axis = latent.ndim - 2
        if latent.shape[axis] != plan.num_visible:
            raise PlanError(f"decoder got {latent.shape[axis]} visible latents, plan has {plan.num_visible}")
        if masked_patches is not None and masked_patches.shape[axis] != plan.num_masked:
            raise PlanError(
                f"decoder got {masked_patches.shape[axis]} masked patches, plan has {plan.num_masked}"
            )

        # Visible latents and masked inputs, both in decoder space with positions
        visible = ops.add(self.embed(latent), _positions(self.positional, plan.visible_indices))
        masked = self.mask_tokens(masked_patches, plan)

        # Cross decoding keeps one side fixed as keys and values in every block
        if self.attention == "cross":
            for block in self.blocks:
                if self.direction == "masked_queries":
                    masked = block.cross_attend(masked, visible)
                else:
                    visible = block.cross_attend(visible, masked)
            x = restore_order(visible, masked, plan)
        else:
            # self and local decoding run on the full sequence in original patch order
            x = restore_order(visible, masked, plan)
            for block in self.blocks:
                x = block(x)
        return self.head(self.norm(x))


class DiffMavilModel(Module):
    """Encoders, fusion and decoders for both modalities (audio only in AudioMAE modes)."""

    def __init__(self, config: RunConfig, seed: int | None = None):
        cfg = config.model
        data = config.data
        rng = stream(config.seed if seed is None else seed, INIT_STREAM)
        self.mask_then_project = cfg.mask_then_project
        self.include_video = config.include_video
        self.diffusion = config.diffusion_enabled

        # Patch geometry per modality
        self.specs: dict[Modality, PatchSpec] = {Modality.AUDIO: data.audio_spec}
        self.grid_dims: dict[Modality, tuple[int, ...]] = {
            Modality.AUDIO: data.audio_spec.grid_dims(data.audio_shape)
        }
        if self.include_video:
            self.specs[Modality.VIDEO] = data.video_spec
            self.grid_dims[Modality.VIDEO] = data.video_spec.grid_dims(data.video_shape)

        # The audio branch always exists; the video branch and fusion only with video
        self.audio_encoder = Encoder(
            data.audio_spec.patch_dim, self._table(Modality.AUDIO, cfg.enc_dim), cfg, rng
        )
        self.audio_decoder = Decoder(
            data.audio_spec.patch_dim, self._table(Modality.AUDIO, cfg.dec_dim), cfg, cfg.audio_attention, rng
        )
        self.video_encoder = None
        self.video_decoder = None
        self.fusion = None
        if self.include_video:
            self.video_encoder = Encoder(
                data.video_spec.patch_dim, self._table(Modality.VIDEO, cfg.enc_dim), cfg, rng
            )
            self.fusion = FusionEncoder(cfg, rng)
            self.video_decoder = Decoder(
                data.video_spec.patch_dim, self._table(Modality.VIDEO, cfg.dec_dim), cfg, cfg.video_attention, rng
            )
        logger.debug(f"Built {config.mode} model with {self.num_parameters():,} parameters")

    def _table(self, modality: Modality, dim: int) -> PositionalEmbedding:
        return PositionalEmbedding.for_grid(self.specs[modality], self.grid_dims[modality], dim)

    def _encoder(self, modality: Modality) -> Encoder:
        encoder = self.audio_encoder if modality == Modality.AUDIO else self.video_encoder
        if encoder is None:
            raise ContractError(f"the {modality} branch is disabled in audio-only modes")
        return encoder

    def _decoder(self, modality: Modality) -> Decoder:
        decoder = self.audio_decoder if modality == Modality.AUDIO else self.video_decoder
        if decoder is None:
            raise ContractError(f"the {modality} branch is disabled in audio-only modes")
        return decoder

    def embed_all(self, modality: Modality, grid: PatchGrid) -> Tensor:
        """Project every patch (project-then-mask ordering)."""
        return self._encoder(modality).embed_patches(grid.patches, np.arange(grid.num_patches))

    def encode(
        self,
        modality: Modality,
        grid: PatchGrid,
        plan: PlanLike,
        embedded: Tensor | None = None,
    ) -> Tensor:
        """Uni-modal latents ``[V x d]`` (or ``[B x V x d]``) of the visible patches.

        Args:
            modality: Which encoder to run
            grid: Patches of one instance or a stacked batch
            plan: ``MaskingPlan`` or ``BatchedPlan`` matching ``grid``
            embedded: Output of ``embed_all`` to reuse across views when
                projecting before masking

        Returns:
            Final-block latents of the visible patches, in plan order
        """
        if plan.num_visible < 1:
            raise DegeneratePlanError("cannot encode an empty visible set")
        encoder = self._encoder(modality)
        if self.mask_then_project:
            # only visible patches are ever projected
            return encoder(gather_visible(grid, plan), plan.visible_indices)
        if embedded is None:
            embedded = self.embed_all(modality, grid)
        return encoder.encode_tokens(ops.gather_rows(embedded, plan.visible_indices))

    def encode_full(self, modality: Modality, grid: PatchGrid) -> Tensor:
        """Latents of every patch with nothing masked, for evaluation."""
        return self._encoder(modality)(grid.patches, np.arange(grid.num_patches))

    def fuse(self, a_um: Tensor, v_um: Tensor) -> tuple[Tensor, Tensor]:
        if self.fusion is None:
            raise ContractError("fusion is disabled in audio-only modes")
        return self.fusion(a_um, v_um)

    def decode(
        self,
        modality: Modality,
        mm_embeds: Tensor,
        masked_tokens: Tensor | None,
        plan: PlanLike,
    ) -> Tensor:
        """Reconstruction ``[M x patch_dim]`` in original patch order."""
        return self._decoder(modality)(mm_embeds, masked_tokens, plan)
