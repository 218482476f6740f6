"""Minimal differentiable computation substrate (numpy, float64)."""

from .gradcheck import check_directional, check_elementwise, relative_error
from .ops import (
    absolute,
    attention,
    attention_block,
    block_shapes,
    broadcast_to,
    concat,
    dropout,
    embedding,
    gelu,
    layer_norm,
    linear,
    mean_pool,
    norm,
    relu,
    square,
)
from .params import ParameterSet
from .tensor import Tensor, as_tensor, backward, grad, no_grad

__all__ = [
    "ParameterSet",
    "Tensor",
    "absolute",
    "as_tensor",
    "attention",
    "attention_block",
    "backward",
    "block_shapes",
    "broadcast_to",
    "check_directional",
    "check_elementwise",
    "concat",
    "dropout",
    "embedding",
    "gelu",
    "grad",
    "layer_norm",
    "linear",
    "mean_pool",
    "no_grad",
    "norm",
    "relative_error",
    "relu",
    "square",
]
