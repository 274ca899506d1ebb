"""Direct sliding-window convolution, kept as an independent reference.

One window dot product per output position, no im2col, no tape. The fast path
in :mod:`lithocnn.engine.ops` must agree with this loop to 1e-10 absolute;
the test suite enforces that on random geometries.
"""
from __future__ import annotations

import numpy as np

from .ops import ConvParams, conv_output_size


def conv2d_direct(data: np.ndarray, kernels: np.ndarray, bias: np.ndarray | None, params: ConvParams) -> np.ndarray:
    """NCHW (or CHW) forward convolution evaluated window by window."""
    squeeze = data.ndim == 3
    if squeeze:
        data = data[None]
    B, C, H, W = data.shape
    K, _, F, _ = kernels.shape
    P, S = params.padding, params.stride
    Ho = conv_output_size(H, F, P, S, "conv height")
    Wo = conv_output_size(W, F, P, S, "conv width")
    if P:
        data = np.pad(data, ((0, 0), (0, 0), (P, P), (P, P)))
    out = np.zeros((B, K, Ho, Wo), dtype=data.dtype)
    for b in range(B):
        for i in range(Ho):
            for j in range(Wo):
                window = data[b, :, i * S:i * S + F, j * S:j * S + F]
                out[b, :, i, j] = np.tensordot(kernels, window, axes=([1, 2, 3], [0, 1, 2]))
    if bias is not None:
        out += bias.reshape(1, K, 1, 1)
    return out[0] if squeeze else out
