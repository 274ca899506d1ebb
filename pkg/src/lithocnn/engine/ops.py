"""Layer operations: forward math plus recorded backward closures.

Convolution follows the sliding dot-product convention (no kernel flip). The
reference loop implementation lives in :mod:`lithocnn.engine.reference`; the
fast path here lowers convolution to an im2col matrix multiply. Both are
cross-checked in the test suite.

Shape law used throughout: ``out = (in - F + 2P) / stride + 1``, and the
result must be an exact integer; fractional output sizes raise ``SizeError``
instead of flooring.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import (
    DataError,
    DegenerateBatchError,
    ParameterError,
    ShapeError,
    SizeError,
)
from ..rng import RngHandle
from .tensor import Tensor

PROB_FLOOR = 1e-12
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def same_padding(kernel_size: int) -> int:
    """Padding that preserves spatial size at stride 1; requires an odd kernel."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ParameterError(f"same padding requires an odd kernel size, got {kernel_size}")
    return (kernel_size - 1) // 2


def conv_output_size(size: int, kernel: int, padding: int, stride: int, what: str = "conv") -> int:
    span = size - kernel + 2 * padding
    if span < 0:
        raise SizeError(f"{what}: window {kernel} exceeds padded input size {size + 2 * padding}")
    if span % stride != 0:
        raise SizeError(
            f"{what}: output size ({size} - {kernel} + 2*{padding}) / {stride} + 1 is not an integer"
        )
    return span // stride + 1


@dataclass(frozen=True)
class ConvParams:
    """Square-kernel convolution geometry."""

    kernel_size: int
    stride: int = 1
    padding: int = 0
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ParameterError("kernel size, stride and channel counts must be positive")
        if self.padding < 0:
            raise ParameterError("padding must be non-negative")

    @classmethod
    def same(cls, kernel_size: int, in_channels: int, out_channels: int, stride: int = 1) -> "ConvParams":
        return cls(kernel_size, stride, same_padding(kernel_size), in_channels, out_channels)


@dataclass
class BatchNormState:
    """Running statistics updated during training, used verbatim at inference."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def initial(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


# ---------------------------------------------------------------------------
# Padding and activations
# ---------------------------------------------------------------------------

def pad(x: Tensor, p: int) -> Tensor:
    """Zero-pad the two trailing (spatial) axes by ``p`` on every side."""
    if p < 0:
        raise ParameterError(f"padding must be non-negative, got {p}")
    if x.ndim < 2:
        raise ShapeError(f"pad needs at least two spatial axes, got ndim={x.ndim}")
    if p == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    out_data = np.pad(x.data, width, mode="constant")

    def backward(g):
        x._accumulate(g[..., p:-p, p:-p])

    return Tensor._result(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)

    def backward(g):
        x._accumulate(g * (x.data > 0))

    return Tensor._result(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# Convolution (im2col fast path)
# ---------------------------------------------------------------------------

def _as_batched(x: Tensor):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"conv/pool input must be (C,H,W) or (B,C,H,W), got ndim={x.ndim}")


def conv2d(x: Tensor, kernels: Tensor, bias: Optional[Tensor], params: ConvParams) -> Tensor:
    """Sliding dot-product convolution of NCHW input with OIHW kernels."""
    data, squeeze = _as_batched(x)
    B, C, H, W = data.shape
    k = kernels.data
    if k.ndim != 4 or k.shape[2] != k.shape[3]:
        raise ShapeError(f"kernels must be (K,C,F,F), got {k.shape}")
    K, Ck, F, _ = k.shape
    if F != params.kernel_size:
        raise ShapeError(f"kernel axis 2: size {F} does not match params.kernel_size {params.kernel_size}")
    if Ck != C:
        raise ShapeError(f"kernel axis 1: {Ck} channels but input axis {'0' if squeeze else '1'} has {C}")
    if params.in_channels != C:
        raise ShapeError(f"input channel axis: expected {params.in_channels}, got {C}")
    if params.out_channels != K:
        raise ShapeError(f"kernel axis 0: expected {params.out_channels} filters, got {K}")
    if bias is not None and bias.data.shape != (K,):
        raise ShapeError(f"bias axis 0: expected ({K},), got {bias.data.shape}")
    P, S = params.padding, params.stride
    Ho = conv_output_size(H, F, P, S, "conv height")
    Wo = conv_output_size(W, F, P, S, "conv width")

    padded = np.pad(data, ((0, 0), (0, 0), (P, P), (P, P))) if P else data
    windows = sliding_window_view(padded, (F, F), axis=(2, 3))[:, :, ::S, ::S]
    # (B,C,Ho,Wo,F,F) -> (B*Ho*Wo, C*F*F); the single big copy of the fast path
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * F * F)
    w_mat = k.reshape(K, C * F * F)
    out_mat = cols @ w_mat.T
    if bias is not None:
        out_mat += bias.data
    out_data = out_mat.reshape(B, Ho, Wo, K).transpose(0, 3, 1, 2)
    if squeeze:
        out_data = out_data[0]

    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def backward(g):
        gb = g[None] if squeeze else g
        g_mat = gb.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, K)
        kernels._accumulate((g_mat.T @ cols).reshape(K, C, F, F))
        if bias is not None:
            bias._accumulate(g_mat.sum(axis=0))
        if x.requires_grad:
            dcols = (g_mat @ w_mat).reshape(B, Ho, Wo, C, F, F).transpose(0, 3, 1, 2, 4, 5)
            dpad = np.zeros_like(padded)
            for fi in range(F):
                for fj in range(F):
                    dpad[:, :, fi:fi + S * Ho:S, fj:fj + S * Wo:S] += dcols[:, :, :, :, fi, fj]
            dx = dpad[:, :, P:P + H, P:P + W] if P else dpad
            x._accumulate(dx[0] if squeeze else dx)

    return Tensor._result(out_data, parents, backward)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------

def _pool_windows(data, window, stride, what):
    B, C, H, W = data.shape
    Ho = conv_output_size(H, window, 0, stride, what + " height")
    Wo = conv_output_size(W, window, 0, stride, what + " width")
    win = sliding_window_view(data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    return win, Ho, Wo


def max_pool(x: Tensor, window: int, stride: int) -> Tensor:
    data, squeeze = _as_batched(x)
    win, Ho, Wo = _pool_windows(data, window, stride, "max_pool")
    flat = win.reshape(*win.shape[:4], window * window)
    idx = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out_data = out_data[0]

    def backward(g):
        gb = g[None] if squeeze else g
        dx = np.zeros_like(data)
        for k in range(window * window):
            fi, fj = divmod(k, window)
            contrib = gb * (idx == k)
            dx[:, :, fi:fi + stride * Ho:stride, fj:fj + stride * Wo:stride] += contrib
        x._accumulate(dx[0] if squeeze else dx)

    return Tensor._result(out_data, (x,), backward)


def avg_pool(x: Tensor, window: int, stride: int) -> Tensor:
    data, squeeze = _as_batched(x)
    win, Ho, Wo = _pool_windows(data, window, stride, "avg_pool")
    out_data = win.mean(axis=(-2, -1))
    if squeeze:
        out_data = out_data[0]
    inv = 1.0 / (window * window)

    def backward(g):
        gb = g[None] if squeeze else g
        dx = np.zeros_like(data)
        spread = gb * inv
        for k in range(window * window):
            fi, fj = divmod(k, window)
            dx[:, :, fi:fi + stride * Ho:stride, fj:fj + stride * Wo:stride] += spread
        x._accumulate(dx[0] if squeeze else dx)

    return Tensor._result(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------

def dropout(x: Tensor, rate: float, rng: Optional[RngHandle], training: bool) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate) so inference is identity."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("training-mode dropout requires an RngHandle")
    keep = rng.generator().random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    out_data = x.data * mask

    def backward(g):
        x._accumulate(g * mask)

    return Tensor._result(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# Dense
# ---------------------------------------------------------------------------

def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``weights @ x + bias`` with weights of shape (m, n)."""
    w, b = weights.data, bias.data
    if w.ndim != 2:
        raise ShapeError(f"weights must be 2-D (m,n), got {w.shape}")
    m, n = w.shape
    single = x.ndim == 1
    data = x.data[None] if single else x.data
    if data.ndim != 2 or data.shape[1] != n:
        raise ShapeError(f"input axis {-1}: expected length {n}, got {data.shape}")
    if b.shape != (m,):
        raise ShapeError(f"bias axis 0: expected ({m},), got {b.shape}")
    out_data = data @ w.T + b
    if single:
        out_data = out_data[0]

    def backward(g):
        gb = g[None] if single else g
        weights._accumulate(gb.T @ data)
        bias._accumulate(gb.sum(axis=0))
        if x.requires_grad:
            dx = gb @ w
            x._accumulate(dx[0] if single else dx)

    return Tensor._result(out_data, (x, weights, bias), backward)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalization over the batch (and spatial) axes."""
    if x.ndim not in (2, 4):
        raise ShapeError(f"batch_norm input must be (B,C) or (B,C,H,W), got ndim={x.ndim}")
    C = x.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeError(f"gamma/beta axis 0: expected ({C},), got {gamma.data.shape}/{beta.data.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    cshape = (1, C) if x.ndim == 2 else (1, C, 1, 1)
    eps = state.eps

    if training:
        if x.shape[0] < 2:
            raise DegenerateBatchError(f"batch_norm training requires batch size >= 2, got {x.shape[0]}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.running_mean = (state.momentum * state.running_mean + (1 - state.momentum) * mean).astype(
            state.running_mean.dtype
        )
        state.running_var = (state.momentum * state.running_var + (1 - state.momentum) * var).astype(
            state.running_var.dtype
        )
    else:
        mean = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(cshape)) * inv_std.reshape(cshape)
    out_data = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)

    def backward(g):
        gamma._accumulate((g * xhat).sum(axis=axes))
        beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(cshape)
            if training:
                m1 = dxhat.mean(axis=axes, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
                dx = inv_std.reshape(cshape) * (dxhat - m1 - xhat * m2)
            else:
                dx = dxhat * inv_std.reshape(cshape)
            x._accumulate(dx)

    return Tensor._result(out_data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# Softmax and loss
# ---------------------------------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Max-shifted softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        x._accumulate((g - dot) * out_data)

    return Tensor._result(out_data, (x,), backward)


def cross_entropy_loss(probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the labelled class, floored at 1e-12."""
    single = probs.ndim == 1
    p = probs.data[None] if single else probs.data
    if p.ndim != 2:
        raise ShapeError(f"probs must be (k,) or (B,k), got ndim={probs.ndim}")
    B, k = p.shape
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if lab.shape != (B,):
        raise ShapeError(f"labels axis 0: expected {B} entries, got {lab.shape}")
    if lab.min() < 0 or lab.max() >= k:
        raise DataError(f"label out of range [0, {k}): {lab[(lab < 0) | (lab >= k)][0]}")
    picked = p[np.arange(B), lab]
    clamped = np.maximum(picked, PROB_FLOOR)
    out_data = np.asarray(-np.log(clamped).mean(), dtype=p.dtype)

    def backward(g):
        dp = np.zeros_like(p)
        live = picked >= PROB_FLOOR
        dp[np.arange(B), lab] = np.where(live, -1.0 / clamped, 0.0) * (float(g) / B)
        probs._accumulate(dp[0] if single else dp)

    return Tensor._result(out_data, (probs,), backward)


# ---------------------------------------------------------------------------
# Structural ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor._result(out_data, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    """Collapse all non-batch axes; 3-D input is treated as a single sample."""
    if x.ndim <= 1:
        return x
    lead = x.shape[0] if x.ndim == 4 or x.ndim == 2 else None
    if lead is None:
        return reshape(x, (-1,))
    return reshape(x, (lead, -1))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return Tensor._result(out_data, (a, b), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return Tensor._result(out_data, tuple(tensors), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar projection ``sum(x * weights)``; scalarizes outputs for grad checks."""
    w = np.asarray(weights)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights shape {w.shape} != input {x.shape}")
    out_data = np.asarray((x.data * w).sum(), dtype=x.dtype)

    def backward(g):
        x._accumulate(float(g) * w.astype(x.data.dtype))

    return Tensor._result(out_data, (x,), backward)
