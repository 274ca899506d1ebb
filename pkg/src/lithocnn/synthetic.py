"""Versioned synthetic 6-texture corpus standing in for proprietary core photos.

Each lithotype gets a procedural texture family: horizontal laminae over fine
speckle (laminated sandstone), medium speckle (massive sandstone), fine
speckle (siltstone), smooth light blotches (limestone), dark low-contrast
grain (argillite) and coarse high-contrast crystals (granite). The laminated
and siltstone families deliberately overlap at low lamina contrast; that pair
is the designed confusion mode of the corpus.

Bump ``GENERATOR_VERSION`` on any recipe change: downstream accuracy gates
are calibrated against the exact pixel output.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .images import (
    LithotypeLabel,
    TILE_DEPTH_M,
    content_hash,
    resize_bilinear,
    save_tile_png,
    write_manifest,
)
from .rng import RngHandle

GENERATOR_VERSION = "1"


def _value_noise(g: np.random.Generator, size: int, scale: float, amp: float) -> np.ndarray:
    """Bilinear-upsampled uniform grid noise in [-amp, amp] at a grain scale."""
    n = max(2, int(math.ceil(size / scale)) + 1)
    low = g.random((n, n))
    up = resize_bilinear(low[None].astype(np.float64), size, size)[0]
    return (up - 0.5) * (2.0 * amp)


def _base(g: np.random.Generator, tint, jitter=0.02) -> np.ndarray:
    t = np.asarray(tint, dtype=np.float64) + g.uniform(-jitter, jitter, size=3)
    return t[:, None, None]


def _stripes(g: np.random.Generator, size: int, period_range, contrast: float) -> np.ndarray:
    period = g.uniform(*period_range)
    phase = g.uniform(0, period)
    y = np.arange(size, dtype=np.float64)
    wave = np.sin(2 * np.pi * (y + phase) / period)
    return (contrast * wave)[None, :, None]


def generate_tile(label: LithotypeLabel, rng: RngHandle, size: int = 227) -> np.ndarray:
    """One synthetic (3, size, size) float32 tile in [0, 1] for a lithotype."""
    g = rng.generator()
    L = LithotypeLabel(label)
    if L is LithotypeLabel.ARGILLITE:
        v = _base(g, (0.16, 0.14, 0.13)) + _value_noise(g, size, 2.5, 0.035) + _value_noise(g, size, 22, 0.02)
    elif L is LithotypeLabel.GRANITE:
        coarse = _value_noise(g, size, 14, 0.26)
        crystals = np.where(_value_noise(g, size, 9, 1.0) > 0.45, 0.18, 0.0)
        v = _base(g, (0.62, 0.55, 0.53)) + coarse + crystals
        v[0] += 0.04 * (coarse > 0.1)  # pinkish feldspar patches
    elif L is LithotypeLabel.LIMESTONE:
        v = _base(g, (0.80, 0.76, 0.68)) + _value_noise(g, size, 42, 0.10) + _value_noise(g, size, 3, 0.02)
    elif L is LithotypeLabel.SANDSTONE_LAMINATED:
        contrast = g.uniform(0.02, 0.20)
        v = (
            _base(g, (0.54, 0.47, 0.38))
            + _value_noise(g, size, 2.0, 0.05)
            + _stripes(g, size, (8, 28), contrast)
        )
    elif L is LithotypeLabel.SANDSTONE_MASSIVE:
        v = _base(g, (0.60, 0.48, 0.33)) + _value_noise(g, size, 5.5, 0.09) + _value_noise(g, size, 11, 0.05)
    else:  # SILTSTONE
        v = _base(g, (0.52, 0.47, 0.40)) + _value_noise(g, size, 2.0, 0.05)
        if g.random() < 0.10:  # occasional near-invisible lamination
            v = v + _stripes(g, size, (8, 28), g.uniform(0.01, 0.04))
    return np.clip(v, 0.0, 1.0).astype(np.float32)


def generate_column(label: LithotypeLabel, rng: RngHandle, tile_px: int, n_tiles: int) -> np.ndarray:
    """Stack per-tile textures into a (n*tile_px, tile_px, 3) uint8 core column."""
    rows = []
    for i in range(n_tiles):
        tile = generate_tile(label, rng.child("tile", i), size=tile_px)
        rows.append((tile * 255).round().astype(np.uint8).transpose(1, 2, 0))
    return np.concatenate(rows, axis=0)


def generate_corpus(out_dir, per_class: int, seed: int, size: int = 227) -> Path:
    """Materialize a labeled tile corpus (PNG + JSON-lines manifest).

    Tiles for each class belong to a synthetic well named after the class, at
    consecutive 0.1 m depth intervals. Returns the manifest path.
    """
    out = Path(out_dir)
    tiles_dir = out / "tiles"
    tiles_dir.mkdir(parents=True, exist_ok=True)
    root = RngHandle(seed, 0)
    records = []
    for label in LithotypeLabel:
        well = f"SYN-{label.canonical}"
        for i in range(per_class):
            arr = generate_tile(label, root.child(label.canonical, i), size=size)
            digest = content_hash((arr * 255).astype(np.uint8))
            name = f"{well}_{i:05d}_{digest}.png"
            save_tile_png(arr, tiles_dir / name)
            records.append(
                {
                    "path": f"tiles/{name}",
                    "well_id": well,
                    "depth_top_m": round(1000.0 + i * TILE_DEPTH_M, 6),
                    "depth_bottom_m": round(1000.0 + (i + 1) * TILE_DEPTH_M, 6),
                    "color_mode": "rgb",
                    "label": label.canonical,
                    "provenance_id": f"{well}:{i}",
                    "generator_version": GENERATOR_VERSION,
                }
            )
    manifest = out / "tiles.jsonl"
    write_manifest(records, manifest)
    return manifest


def generate_well(out_dir, n_tiles: int, seed: int, well_id: str = "SYN-WELL", depth_top_m: float = 2000.0, size: int = 227) -> Path:
    """Unlabeled single-well manifest with contiguous depth coverage."""
    out = Path(out_dir)
    tiles_dir = out / "tiles"
    tiles_dir.mkdir(parents=True, exist_ok=True)
    root = RngHandle(seed, 1)
    labels = list(LithotypeLabel)
    records = []
    for i in range(n_tiles):
        label = labels[int(root.child("pick", i).generator().integers(0, len(labels)))]
        arr = generate_tile(label, root.child("well", i), size=size)
        digest = content_hash((arr * 255).astype(np.uint8))
        name = f"{well_id}_{i:05d}_{digest}.png"
        save_tile_png(arr, tiles_dir / name)
        records.append(
            {
                "path": f"tiles/{name}",
                "well_id": well_id,
                "depth_top_m": round(depth_top_m + i * TILE_DEPTH_M, 6),
                "depth_bottom_m": round(depth_top_m + (i + 1) * TILE_DEPTH_M, 6),
                "color_mode": "rgb",
                "provenance_id": f"{well_id}:{i}",
                "generator_version": GENERATOR_VERSION,
            }
        )
    manifest = out / "well.jsonl"
    write_manifest(records, manifest)
    return manifest
