"""Dense-array math with hand-written backward passes."""
from .gradcheck import GradCheckReport, check_gradients
from .layers import (
    GELU,
    MLP,
    DiTBlock,
    LayerNorm,
    Linear,
    MaskedSelfAttention,
    TimestepEmbedding,
    gelu,
    layer_norm,
    masked_softmax,
    matmul,
    sinusoidal_embedding,
)
from .tensor import load_tensor, read_tensor, save_tensor, write_tensor

__all__ = [
    "GELU",
    "MLP",
    "DiTBlock",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "MaskedSelfAttention",
    "TimestepEmbedding",
    "check_gradients",
    "gelu",
    "layer_norm",
    "load_tensor",
    "masked_softmax",
    "matmul",
    "read_tensor",
    "save_tensor",
    "sinusoidal_embedding",
    "write_tensor",
]
