"""Core-box image ingestion: tile cropping, resize, normalization, manifests.

All internal processing happens on channels-first float arrays in [0, 1];
8-bit PNG/JPEG files are decoded at the boundary. Cropping walks a
pre-rectified single-column core image top to bottom in 10 cm windows; depth
bookkeeping assigns each tile a half-open 0.1 m interval.

Manifests are UTF-8 JSON-lines, one record per image or tile; unknown keys
ride along untouched so upstream provenance survives every stage.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .errors import DataError, IngestionError, ParameterError

log = logging.getLogger(__name__)

TILE_CM = 10.0
TILE_DEPTH_M = 0.1
TARGET_SIZE = 227
# Nominal tile edge when only "about 150 DPI" is known; the matching dpi
# (606 px * 2.54 / 10 cm) is substituted when a record carries no dpi and
# the loader was told to assume the nominal geometry.
NOMINAL_TILE_PX = 606
NOMINAL_DPI = NOMINAL_TILE_PX * 2.54 / TILE_CM

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


class LithotypeLabel(IntEnum):
    """Closed rock-class set with stable integer codes."""

    ARGILLITE = 0
    GRANITE = 1
    LIMESTONE = 2
    SANDSTONE_LAMINATED = 3
    SANDSTONE_MASSIVE = 4
    SILTSTONE = 5

    @classmethod
    def from_name(cls, name: str) -> "LithotypeLabel":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise DataError(f"unknown lithotype '{name}' (have {[m.name.lower() for m in cls]})") from None

    @property
    def canonical(self) -> str:
        return self.name.lower()


CLASS_NAMES = [m.canonical for m in LithotypeLabel]


@dataclass
class CoreBoxImage:
    """One rectified single-column core photograph with depth metadata."""

    pixels: np.ndarray  # (H, W, 3) uint8
    dpi: float
    well_id: str
    depth_top_m: float
    depth_bottom_m: float

    def __post_init__(self):
        if self.dpi is None or self.dpi <= 0:
            raise IngestionError(f"well {self.well_id}: dpi missing or non-positive")
        if self.depth_bottom_m <= self.depth_top_m:
            raise IngestionError(
                f"well {self.well_id}: depth interval [{self.depth_top_m}, {self.depth_bottom_m}] is empty"
            )
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise IngestionError(f"well {self.well_id}: pixels must be (H,W,3) uint8, got {px.shape} {px.dtype}")
        self.pixels = px


@dataclass
class SampleTile:
    """One normalized 227x227 tile with provenance and depth interval."""

    pixels: np.ndarray  # (C, 227, 227) float32 in [0, 1]
    well_id: str
    depth_top_m: float
    depth_bottom_m: float
    provenance_id: str
    color_mode: str = "rgb"
    label: Optional[LithotypeLabel] = None
    extra: dict = field(default_factory=dict)


@dataclass
class RawTile:
    """Cropped but not yet resized tile (uint8, HWC)."""

    pixels: np.ndarray
    well_id: str
    depth_top_m: float
    depth_bottom_m: float
    index: int


def crop_samples(image: CoreBoxImage, tile_cm: float = TILE_CM) -> list:
    """Cut non-overlapping square-ish windows top to bottom.

    A trailing remainder shorter than half a tile is dropped with a warning;
    a longer one becomes a final full tile aligned to the image bottom. Depth
    intervals advance on the nominal 0.1 m grid and never extend past the
    image's stated bottom depth.
    """
    tile_px = int(round(tile_cm * image.dpi / 2.54))
    H = image.pixels.shape[0]
    if tile_px < 2:
        raise IngestionError(f"well {image.well_id}: tile size {tile_px}px is degenerate at dpi {image.dpi}")
    n_full, rem = divmod(H, tile_px)
    n = n_full + (1 if rem >= tile_px / 2 else 0)
    if rem and n == n_full:
        log.warning("well %s: dropping %dpx remainder (< half a tile)", image.well_id, rem)
    depth_span = image.depth_bottom_m - image.depth_top_m
    max_by_depth = int(depth_span / TILE_DEPTH_M + 1e-9)
    if n > max_by_depth:
        log.warning("well %s: %d tiles exceed the stated %.1f m interval; clamping", image.well_id, n, depth_span)
        n = max_by_depth
    tiles = []
    for i in range(n):
        start = i * tile_px
        if start + tile_px > H:  # bottom-aligned final tile
            start = max(0, H - tile_px)
        tiles.append(
            RawTile(
                pixels=image.pixels[start:start + tile_px],
                well_id=image.well_id,
                depth_top_m=image.depth_top_m + i * TILE_DEPTH_M,
                depth_bottom_m=image.depth_top_m + (i + 1) * TILE_DEPTH_M,
                index=i,
            )
        )
    return tiles


def resize_bilinear(arr: np.ndarray, out_h: int = TARGET_SIZE, out_w: int = TARGET_SIZE) -> np.ndarray:
    """Bilinear resample with half-pixel-center mapping, channel independent.

    Identity sizes return the input values bitwise; outputs are convex
    combinations of the four neighbours so min/max never leave the source
    range.
    """
    single = arr.ndim == 2
    data = arr[None] if single else arr
    if data.ndim != 3:
        raise ParameterError(f"resize expects (C,H,W) or (H,W), got {arr.shape}")
    C, H, W = data.shape
    if H < 2 or W < 2:
        raise ParameterError(f"resize source must be at least 2x2, got {H}x{W}")

    def axis_coords(n_src, n_dst):
        src = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
        src = np.clip(src, 0.0, n_src - 1.0)
        lo = np.floor(src).astype(np.int64)
        lo = np.minimum(lo, n_src - 2)
        frac = src - lo
        return lo, frac

    ry, fy = axis_coords(H, out_h)
    rx, fx = axis_coords(W, out_w)
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    tl = data[:, ry][:, :, rx]
    tr = data[:, ry][:, :, rx + 1]
    bl = data[:, ry + 1][:, :, rx]
    br = data[:, ry + 1][:, :, rx + 1]
    top = tl * (1.0 - fx) + tr * fx
    bot = bl * (1.0 - fx) + br * fx
    out = (top * (1.0 - fy) + bot * fy).astype(arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64)
    return out[0] if single else out


def normalize(pixels: np.ndarray) -> np.ndarray:
    """8-bit samples to float32 in [0, 1] (division by 255)."""
    return np.asarray(pixels, dtype=np.float32) / np.float32(255.0)


def denormalize(arr: np.ndarray) -> np.ndarray:
    """Inverse of normalize; exact on values that came from 8-bit samples."""
    return np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def to_grayscale(arr: np.ndarray) -> np.ndarray:
    """Luma projection of a (3,H,W) tile to (1,H,W) float32.

    Accumulates in float64 so an already-gray triple (r=g=b=v) comes back as
    exactly v after the final float32 rounding.
    """
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ParameterError(f"to_grayscale expects (3,H,W), got {arr.shape}")
    r, g, b = GRAY_WEIGHTS
    luma = arr[0].astype(np.float64) * r + arr[1].astype(np.float64) * g + arr[2].astype(np.float64) * b
    return luma[None].astype(np.float32)


# ---------------------------------------------------------------------------
# PNG boundary
# ---------------------------------------------------------------------------

def load_image_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise IngestionError(f"image file not found: {path}") from None
    except Exception as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc


def save_tile_png(arr: np.ndarray, path) -> None:
    """Write a (C,H,W) float tile in [0,1] as an 8-bit PNG (L or RGB)."""
    data = denormalize(arr)
    if data.shape[0] == 1:
        im = Image.fromarray(data[0], mode="L")
    else:
        im = Image.fromarray(data.transpose(1, 2, 0), mode="RGB")
    im.save(path, format="PNG")


def load_tile_pixels(path, color_mode: str) -> np.ndarray:
    """Read a tile PNG back into the normalized (C,H,W) float32 layout."""
    with Image.open(path) as im:
        if color_mode == "gray":
            arr = np.asarray(im.convert("L"), dtype=np.uint8)[None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8).transpose(2, 0, 1)
    return normalize(arr)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def load_manifest(path) -> list:
    """Read a JSON-lines manifest, preserving unknown keys."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"manifest not found: {path}")
    records = []
    with p.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: record must be an object")
            records.append(rec)
    return records


def write_manifest(records: Iterable[dict], path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def content_hash(arr: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(arr).tobytes()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Prepare stage: box manifest -> normalized tile corpus
# ---------------------------------------------------------------------------

def record_to_box(rec: dict, base_dir: Path, assume_nominal_dpi: bool = False) -> CoreBoxImage:
    for key in ("path", "well_id", "depth_top_m", "depth_bottom_m"):
        if key not in rec:
            raise IngestionError(f"manifest record missing '{key}': {rec}")
    dpi = rec.get("dpi")
    if dpi is None:
        if not assume_nominal_dpi:
            raise IngestionError(f"record for well {rec['well_id']} has no dpi")
        dpi = NOMINAL_DPI
    img_path = Path(rec["path"])
    if not img_path.is_absolute():
        img_path = base_dir / img_path
    return CoreBoxImage(
        pixels=load_image_rgb(img_path),
        dpi=float(dpi),
        well_id=str(rec["well_id"]),
        depth_top_m=float(rec["depth_top_m"]),
        depth_bottom_m=float(rec["depth_bottom_m"]),
    )


def prepare_tiles(
    manifest_path,
    out_dir,
    color_mode: str = "rgb",
    tile_cm: float = TILE_CM,
    assume_nominal_dpi: bool = False,
) -> Path:
    """Crop, resize and normalize every box image into a tile corpus.

    Emits ``tiles/<name>.png`` plus ``tiles.jsonl``; tile file names embed a
    content hash, so a rerun over identical inputs rewrites identical bytes.
    Returns the path of the tile manifest.
    """
    if color_mode not in ("rgb", "gray"):
        raise ParameterError(f"color_mode must be rgb|gray, got {color_mode}")
    records = load_manifest(manifest_path)
    if not records:
        raise DataError(f"manifest {manifest_path} is empty")
    out = Path(out_dir)
    tiles_dir = out / "tiles"
    tiles_dir.mkdir(parents=True, exist_ok=True)
    base_dir = Path(manifest_path).parent
    tile_records = []
    for rec in records:
        box = record_to_box(rec, base_dir, assume_nominal_dpi)
        label = rec.get("label")
        for raw in crop_samples(box, tile_cm):
            arr = normalize(raw.pixels.transpose(2, 0, 1))
            arr = resize_bilinear(arr)
            if color_mode == "gray":
                arr = to_grayscale(arr)
            digest = content_hash(denormalize(arr))
            name = f"{box.well_id}_{raw.index:05d}_{digest}.png"
            save_tile_png(arr, tiles_dir / name)
            out_rec = {k: v for k, v in rec.items() if k not in ("path", "dpi")}
            out_rec.update(
                {
                    "path": f"tiles/{name}",
                    "well_id": raw.well_id,
                    "depth_top_m": round(raw.depth_top_m, 6),
                    "depth_bottom_m": round(raw.depth_bottom_m, 6),
                    "color_mode": color_mode,
                    "provenance_id": f"{raw.well_id}:{raw.depth_top_m:.3f}:{raw.index}",
                }
            )
            if label is not None:
                out_rec["label"] = label
            tile_records.append(out_rec)
    manifest_out = out / "tiles.jsonl"
    write_manifest(tile_records, manifest_out)
    return manifest_out


def load_tiles(records: list, base_dir) -> list:
    """Materialize SampleTile objects for manifest records."""
    base = Path(base_dir)
    tiles = []
    for rec in records:
        color_mode = rec.get("color_mode", "rgb")
        path = Path(rec["path"])
        if not path.is_absolute():
            path = base / path
        label = rec.get("label")
        tiles.append(
            SampleTile(
                pixels=load_tile_pixels(path, color_mode),
                well_id=rec.get("well_id", ""),
                depth_top_m=float(rec.get("depth_top_m", 0.0)),
                depth_bottom_m=float(rec.get("depth_bottom_m", 0.0)),
                provenance_id=rec.get("provenance_id", rec["path"]),
                color_mode=color_mode,
                label=LithotypeLabel.from_name(label) if isinstance(label, str) else (LithotypeLabel(label) if label is not None else None),
                extra={k: v for k, v in rec.items() if k not in {"path", "well_id", "depth_top_m", "depth_bottom_m", "provenance_id", "color_mode", "label"}},
            )
        )
    return tiles
