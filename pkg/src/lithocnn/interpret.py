"""Model introspection: per-layer feature maps and local surrogate explanations.

Feature maps are captured in inference mode and min/max normalized per filter
for display; capture copies activations out of the forward pass and cannot
change the prediction.

Explanations fit a weighted least-squares linear surrogate over a regular
g x g grid of regions: random binary masks hide regions (filled with the
tile's per-channel mean), the model scores each masked tile, and samples are
weighted by exp(-d^2 / sigma^2) with d the masked-region fraction. Positive
surrogate weights mark regions that push the prediction toward the class.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import no_grad
from .errors import ParameterError
from .graph import NetworkGraph, forward
from .rng import RngHandle

DEFAULT_GRID = 7
DEFAULT_SAMPLES = 1000
DEFAULT_SIGMA = 0.25
DEFAULT_TOP_K = 5
CONSTANT_OUTPUT_TOL = 1e-12


@dataclass
class FeatureMapSet:
    """Per-layer activation maps for one tile."""

    layers: dict  # name -> {"activations": (K,H,W), "minmax": (K,2), "display": (K,H,W) in [0,1]}

    def layer_names(self):
        return list(self.layers)


def extract_feature_maps(graph: NetworkGraph, params: dict, tile: np.ndarray, layer_names: Sequence[str]) -> FeatureMapSet:
    """Capture named layer activations for a single (C,H,W) tile."""
    with no_grad():
        _, acts = forward(graph, params, tile[None], mode="infer", capture=list(layer_names))
    layers = {}
    for name in layer_names:
        a = acts[name][0]
        if a.ndim == 1:  # dense output: one "filter" per unit
            a = a[:, None, None]
        lo = a.min(axis=(1, 2))
        hi = a.max(axis=(1, 2))
        span = np.where(hi > lo, hi - lo, 1.0)
        display = (a - lo[:, None, None]) / span[:, None, None]
        layers[name] = {
            "activations": a,
            "minmax": np.stack([lo, hi], axis=1),
            "display": np.clip(display, 0.0, 1.0),
        }
    return FeatureMapSet(layers)


@dataclass
class Explanation:
    grid: int
    class_index: int
    weights: np.ndarray  # (g, g) surrogate weight per region
    mask: list  # [(row, col)] of the top-k positive regions
    intercept: float
    residual: float  # weighted RMS residual of the surrogate fit
    uninformative: bool = False
    region_shape: tuple = field(default=None)

    def top_regions(self):
        return list(self.mask)


def _region_slices(h: int, w: int, grid: int):
    ys = np.linspace(0, h, grid + 1, dtype=int)
    xs = np.linspace(0, w, grid + 1, dtype=int)
    slices = []
    for r in range(grid):
        for c in range(grid):
            slices.append(((r, c), slice(ys[r], ys[r + 1]), slice(xs[c], xs[c + 1])))
    return slices


def explain(
    predict_fn: Callable[[np.ndarray], np.ndarray],
    tile: np.ndarray,
    class_index: int,
    grid: int = DEFAULT_GRID,
    n_samples: int = DEFAULT_SAMPLES,
    rng: Optional[RngHandle] = None,
    sigma: float = DEFAULT_SIGMA,
    top_k: int = DEFAULT_TOP_K,
    batch_size: int = 64,
) -> Explanation:
    """Fit a local linear surrogate for ``predict_fn`` around ``tile``.

    ``predict_fn`` maps a (N,C,H,W) batch to (N, classes) probabilities.
    Weights attach to region coordinates, not enumeration order.
    """
    if tile.ndim != 3:
        raise ParameterError(f"tile must be (C,H,W), got {tile.shape}")
    n_regions = grid * grid
    if n_samples < n_regions:
        raise ParameterError(f"n_samples ({n_samples}) must be >= number of regions ({n_regions})")
    if rng is None:
        rng = RngHandle(0)
    C, H, W = tile.shape
    slices = _region_slices(H, W, grid)
    fill = tile.mean(axis=(1, 2))[:, None, None].astype(tile.dtype)

    g = rng.generator()
    masks = g.integers(0, 2, size=(n_samples, n_regions)).astype(np.float64)
    masks[0, :] = 1.0  # keep the unperturbed tile in the sample set

    preds = np.empty(n_samples, dtype=np.float64)
    for start in range(0, n_samples, batch_size):
        stop = min(start + batch_size, n_samples)
        batch = np.repeat(tile[None], stop - start, axis=0).copy()
        for row, m in enumerate(masks[start:stop]):
            for idx, ((r, c), ys, xs) in enumerate(slices):
                if m[idx] == 0.0:
                    batch[row, :, ys, xs] = fill
        out = np.asarray(predict_fn(batch), dtype=np.float64)
        preds[start:stop] = out[:, class_index]

    uninformative = bool(np.ptp(preds) < CONSTANT_OUTPUT_TOL)

    hidden_fraction = 1.0 - masks.mean(axis=1)
    sample_w = np.exp(-(hidden_fraction ** 2) / (sigma ** 2))
    sw = np.sqrt(sample_w)
    X = np.concatenate([masks, np.ones((n_samples, 1))], axis=1)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], preds * sw, rcond=None)
    fitted = X @ coef
    residual = float(np.sqrt(np.average((preds - fitted) ** 2, weights=sample_w)))

    weights = coef[:n_regions].reshape(grid, grid)
    order = np.argsort(coef[:n_regions])[::-1]
    mask = [divmod(int(i), grid) for i in order[:top_k] if coef[i] > 0]
    return Explanation(
        grid=grid,
        class_index=class_index,
        weights=weights,
        mask=mask,
        intercept=float(coef[-1]),
        residual=residual,
        uninformative=uninformative,
        region_shape=(H // grid, W // grid),
    )


def model_predict_fn(graph: NetworkGraph, params: dict) -> Callable[[np.ndarray], np.ndarray]:
    """Inference-mode batch scorer for a built model."""

    def predict(batch: np.ndarray) -> np.ndarray:
        with no_grad():
            return forward(graph, params, batch.astype(np.float32), mode="infer").data

    return predict
