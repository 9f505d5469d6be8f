"""DiffMAViL model assembly and its building blocks."""

from src.model.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from src.model.diffmavil import DiffMavilModel, Decoder, Encoder, FusionEncoder
from src.model.layers import (
    LayerNorm,
    Linear,
    Mlp,
    MultiHeadAttention,
    TransformerBlock,
    cross_attention_block,
    local_window_attention_block,
)
from src.model.positional import PositionalEmbedding, PositionalKind

__all__ = [
    "CheckpointError",
    "Decoder",
    "DiffMavilModel",
    "Encoder",
    "FusionEncoder",
    "LayerNorm",
    "Linear",
    "Mlp",
    "MultiHeadAttention",
    "PositionalEmbedding",
    "PositionalKind",
    "TransformerBlock",
    "cross_attention_block",
    "load_checkpoint",
    "local_window_attention_block",
    "save_checkpoint",
]
