"""Seeded synthetic-image augmentation and dataset oversampling.

Each op maps a (C,H,W) float tile in [0,1] to the same layout, clamped back
into range. Stochastic choices come from explicit ``RngHandle`` streams
derived per (sample, variant), so a materialized corpus is byte-identical
across runs and independent of worker scheduling.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import ConvParams, Tensor, conv2d, no_grad
from .errors import DataError, ParameterError
from .images import content_hash, load_tile_pixels, save_tile_png
from .rng import RngHandle, stable_hash64

log = logging.getLogger(__name__)

RIGHT_ANGLES = (90, 180, 270)

# Default magnitude ranges; every materialized corpus records the actual
# pipeline document next to the images.
DEFAULT_PIPELINE = {
    "ops": [
        {"op": "rotate", "p": 0.5, "angles": [90, 180, 270], "free_deg": 15.0, "free_p": 0.3},
        {"op": "brightness", "p": 0.5, "delta": [-0.2, 0.2]},
        {"op": "color", "p": 0.5, "gain": [0.8, 1.2]},
        {"op": "crop", "p": 0.3, "fraction": [0.1, 0.25], "mode": "blank", "fill": 0.0},
        {"op": "noise", "p": 0.5, "sigma": [0.0, 0.05]},
        {"op": "blur", "p": 0.3, "sizes": [3, 5]},
    ]
}


def _clamp(arr: np.ndarray) -> np.ndarray:
    return np.clip(arr, 0.0, 1.0)


def rotate(arr: np.ndarray, angle: float, rng: Optional[RngHandle] = None) -> np.ndarray:
    """Right angles permute pixels losslessly; free angles resample bilinearly.

    Free-angle rotation uses reflected edges and keeps the original frame, so
    output size always equals input size.
    """
    angle = float(angle) % 360.0
    if angle == 0.0:
        return arr.copy()
    if angle in (90.0, 180.0, 270.0):
        return np.ascontiguousarray(np.rot90(arr, k=int(angle // 90), axes=(1, 2)))
    return _rotate_free(arr, angle)


def _rotate_free(arr: np.ndarray, angle_deg: float) -> np.ndarray:
    C, H, W = arr.shape
    theta = np.deg2rad(angle_deg)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    # inverse map: sample source at the backward-rotated coordinate
    sy = np.cos(theta) * (yy - cy) - np.sin(theta) * (xx - cx) + cy
    sx = np.sin(theta) * (yy - cy) + np.cos(theta) * (xx - cx) + cx

    def reflect(idx, n):
        period = 2 * n - 2 if n > 1 else 1
        idx = np.abs(idx) % period
        return np.where(idx >= n, period - idx, idx)

    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy = (sy - y0)[None]
    fx = (sx - x0)[None]
    y0i = reflect(y0.astype(np.int64), H)
    y1i = reflect(y0.astype(np.int64) + 1, H)
    x0i = reflect(x0.astype(np.int64), W)
    x1i = reflect(x0.astype(np.int64) + 1, W)
    tl = arr[:, y0i, x0i]
    tr = arr[:, y0i, x1i]
    bl = arr[:, y1i, x0i]
    br = arr[:, y1i, x1i]
    out = (tl * (1 - fx) + tr * fx) * (1 - fy) + (bl * (1 - fx) + br * fx) * fy
    return _clamp(out).astype(arr.dtype)


def adjust_brightness(arr: np.ndarray, delta: float) -> np.ndarray:
    return _clamp(arr + np.asarray(delta, dtype=arr.dtype))


def color_shift(arr: np.ndarray, gains) -> np.ndarray:
    gains = np.asarray(gains, dtype=arr.dtype)
    if gains.shape != (arr.shape[0],):
        raise ParameterError(f"need one gain per channel ({arr.shape[0]}), got {gains.shape}")
    return _clamp(arr * gains[:, None, None])


def random_crop(arr: np.ndarray, fraction: float, rng: RngHandle, mode: str = "blank", fill: float = 0.0) -> np.ndarray:
    """Simulate a plug hole (blank a region) or crop-and-resize back.

    The affected region is ceil(fraction*H) x ceil(fraction*W) at a uniformly
    random position.
    """
    if not 0.0 <= fraction < 1.0:
        raise ParameterError(f"crop fraction must lie in [0, 1), got {fraction}")
    if mode not in ("blank", "zoom"):
        raise ParameterError(f"crop mode must be blank|zoom, got {mode}")
    if fraction == 0.0:
        return arr.copy()
    C, H, W = arr.shape
    bh = int(np.ceil(fraction * H))
    bw = int(np.ceil(fraction * W))
    g = rng.generator()
    if mode == "blank":
        y = int(g.integers(0, H - bh + 1))
        x = int(g.integers(0, W - bw + 1))
        out = arr.copy()
        out[:, y:y + bh, x:x + bw] = fill
        return out
    from .images import resize_bilinear

    ch = H - bh
    cw = W - bw
    y = int(g.integers(0, H - ch + 1))
    x = int(g.integers(0, W - cw + 1))
    return _clamp(resize_bilinear(arr[:, y:y + ch, x:x + cw], H, W)).astype(arr.dtype)


def gaussian_noise(arr: np.ndarray, sigma: float, rng: RngHandle) -> np.ndarray:
    if sigma < 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return arr.copy()
    noise = rng.generator().normal(0.0, sigma, size=arr.shape)
    return _clamp(arr + noise).astype(arr.dtype)


def blur(arr: np.ndarray, size: int) -> np.ndarray:
    """Normalized box blur with reflected borders, run through the conv engine."""
    if size < 1 or size % 2 == 0:
        raise ParameterError(f"blur size must be odd and positive, got {size}")
    if size == 1:
        return arr.copy()
    C, H, W = arr.shape
    p = (size - 1) // 2
    padded = np.pad(arr, ((0, 0), (p, p), (p, p)), mode="reflect")
    kernel = np.full((1, 1, size, size), 1.0 / (size * size), dtype=np.float32)
    params = ConvParams(size, 1, 0, 1, 1)
    with no_grad():
        out = np.stack(
            [conv2d(Tensor(padded[c][None].astype(np.float32)), Tensor(kernel), None, params).data[0] for c in range(C)]
        )
    return _clamp(out).astype(arr.dtype)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class AugmentationPipeline:
    """Ordered stochastic ops with per-op application probability."""

    ops: list = field(default_factory=lambda: [dict(o) for o in DEFAULT_PIPELINE["ops"]])
    seed: int = 0

    def __post_init__(self):
        for op in self.ops:
            if not 0.0 <= op.get("p", 1.0) <= 1.0:
                raise ParameterError(f"op probability outside [0,1]: {op}")

    def to_dict(self) -> dict:
        return {"ops": self.ops, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationPipeline":
        return cls(ops=[dict(o) for o in d.get("ops", DEFAULT_PIPELINE["ops"])], seed=int(d.get("seed", 0)))

    @classmethod
    def load(cls, path) -> "AugmentationPipeline":
        p = Path(path)
        if not p.exists():
            raise DataError(f"pipeline config not found: {path}")
        return cls.from_dict(json.loads(p.read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    def apply(self, arr: np.ndarray, rng: RngHandle) -> np.ndarray:
        """Apply each configured op with its probability, parameters drawn from ranges."""
        out = arr
        for i, op in enumerate(self.ops):
            g = rng.child("op", i, op["op"]).generator()
            if g.random() > op.get("p", 1.0):
                continue
            kind = op["op"]
            if kind == "rotate":
                if g.random() < op.get("free_p", 0.0):
                    limit = float(op.get("free_deg", 15.0))
                    out = rotate(out, float(g.uniform(-limit, limit)) % 360.0)
                else:
                    out = rotate(out, float(g.choice(op.get("angles", list(RIGHT_ANGLES)))))
            elif kind == "brightness":
                lo, hi = op.get("delta", [-0.2, 0.2])
                out = adjust_brightness(out, float(g.uniform(lo, hi)))
            elif kind == "color":
                lo, hi = op.get("gain", [0.8, 1.2])
                out = color_shift(out, g.uniform(lo, hi, size=out.shape[0]))
            elif kind == "crop":
                lo, hi = op.get("fraction", [0.1, 0.25])
                out = random_crop(
                    out,
                    float(g.uniform(lo, hi)),
                    rng.child("op", i, "crop-pos"),
                    mode=op.get("mode", "blank"),
                    fill=float(op.get("fill", 0.0)),
                )
            elif kind == "noise":
                lo, hi = op.get("sigma", [0.0, 0.05])
                out = gaussian_noise(out, float(g.uniform(lo, hi)), rng.child("op", i, "noise"))
            elif kind == "blur":
                out = blur(out, int(g.choice(op.get("sizes", [3, 5]))))
            else:
                raise ParameterError(f"unknown augmentation op '{kind}'")
        return out


# ---------------------------------------------------------------------------
# Oversampling
# ---------------------------------------------------------------------------

def oversample(
    records: list,
    pipeline: AugmentationPipeline,
    targets: dict,
    out_dir,
    base_dir,
) -> list:
    """Expand every class to its target count with deterministic variants.

    Originals are always retained; variant j of sample i draws from the
    stream ``(pipeline.seed, hash(provenance_id, j))`` so the corpus content
    does not depend on generation order. Variant images land under
    ``out_dir/augmented``; the expanded record list is returned for the
    caller to write as a manifest.
    """
    out = Path(out_dir)
    aug_dir = out / "augmented"
    aug_dir.mkdir(parents=True, exist_ok=True)

    by_class: dict = {}
    for rec in records:
        if "label" not in rec:
            raise DataError(f"unlabeled record cannot be oversampled: {rec.get('path')}")
        by_class.setdefault(str(rec["label"]), []).append(rec)

    for cls, target in targets.items():
        if cls not in by_class or not by_class[cls]:
            raise DataError(f"class '{cls}' is empty; cannot oversample to {target}")
        if target < len(by_class[cls]):
            raise DataError(f"class '{cls}' already has {len(by_class[cls])} > target {target}")

    expanded = []
    for cls, members in sorted(by_class.items()):
        expanded.extend(members)
        target = targets.get(cls, len(members))
        need = target - len(members)
        for j in range(need):
            src = members[j % len(members)]
            variant_idx = j // len(members) + 1
            prov = src.get("provenance_id", src["path"])
            rng = RngHandle(pipeline.seed, stable_hash64(prov, variant_idx))
            arr = load_tile_pixels(Path(base_dir) / src["path"], src.get("color_mode", "rgb"))
            var = pipeline.apply(arr, rng)
            digest = content_hash((var * 255).astype(np.uint8))
            name = f"aug_{cls}_{stable_hash64(prov) & 0xFFFFFF:06x}_{variant_idx:04d}_{digest}.png"
            save_tile_png(var, aug_dir / name)
            rec = dict(src)
            rec.update(
                {
                    "path": f"augmented/{name}",
                    "provenance_id": f"{prov}#aug{variant_idx}",
                    "source_id": prov,
                    "variant": variant_idx,
                }
            )
            expanded.append(rec)
    return expanded
