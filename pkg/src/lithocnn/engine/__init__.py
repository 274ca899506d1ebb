"""Tensor engine: dense tensors, layer ops, and reverse-mode gradients."""

from .tensor import Tensor, grad_enabled, no_grad
from .ops import (
    BatchNormState,
    ConvParams,
    add,
    avg_pool,
    batch_norm,
    concat,
    conv2d,
    conv_output_size,
    cross_entropy_loss,
    dense,
    dropout,
    flatten,
    max_pool,
    pad,
    relu,
    reshape,
    same_padding,
    softmax,
    weighted_sum,
)
from .reference import conv2d_direct

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "ConvParams",
    "BatchNormState",
    "conv2d",
    "conv2d_direct",
    "conv_output_size",
    "pad",
    "relu",
    "max_pool",
    "avg_pool",
    "dropout",
    "dense",
    "batch_norm",
    "softmax",
    "cross_entropy_loss",
    "add",
    "concat",
    "flatten",
    "reshape",
    "same_padding",
    "weighted_sum",
]
