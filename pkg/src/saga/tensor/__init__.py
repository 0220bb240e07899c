"""Minimal dense tensors with reverse-mode autodiff."""

from .core import Graph, Tensor, as_tensor, backward, default_dtype, get_precision, precision, set_precision
from .gradcheck import grad_check
from .ops import (
    add,
    cross_entropy,
    dropout,
    gelu,
    layer_norm,
    matmul,
    mean,
    mean_pool,
    mul,
    relu,
    reshape,
    slice_,
    softmax,
    sub,
    take,
    transpose,
)
from .prng import LaneGenerator, Prng, mix_seed

__all__ = [
    "Graph", "Tensor", "as_tensor", "backward", "default_dtype", "get_precision", "precision",
    "set_precision", "grad_check", "add", "cross_entropy", "dropout", "gelu", "layer_norm",
    "matmul", "mean", "mean_pool", "mul", "relu", "reshape", "slice_", "softmax", "sub", "take",
    "transpose", "LaneGenerator", "Prng", "mix_seed",
]
