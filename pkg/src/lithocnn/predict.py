"""Depth-indexed lithotype prediction for a well and throughput accounting."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .checkpoint import Model
from .engine import no_grad
from .errors import DataError
from .graph import forward
from .images import TILE_DEPTH_M, load_tiles

log = logging.getLogger(__name__)

DEPTH_GAP_TOL = 1e-6

CSV_COLUMNS = (
    "well_id",
    "depth_top_m",
    "depth_bottom_m",
    "label",
    "confidence",
    "runner_up",
    "runner_up_confidence",
)


@dataclass
class DepthRecord:
    well_id: str
    depth_top_m: float
    depth_bottom_m: float
    label: str
    confidence: float
    runner_up: str
    runner_up_confidence: float


@dataclass
class DepthLog:
    """Ordered, non-overlapping depth intervals with predicted lithotypes."""

    well_id: str
    records: list = field(default_factory=list)

    @property
    def span_m(self) -> float:
        return round(len(self.records) * TILE_DEPTH_M, 9)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.records:
            writer.writerow(
                [
                    r.well_id,
                    f"{r.depth_top_m:.6g}",
                    f"{r.depth_bottom_m:.6g}",
                    r.label,
                    f"{r.confidence:.8g}",
                    r.runner_up,
                    f"{r.runner_up_confidence:.8g}",
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "well_id": self.well_id,
            "span_m": self.span_m,
            "records": [
                {
                    "well_id": r.well_id,
                    "depth_top_m": r.depth_top_m,
                    "depth_bottom_m": r.depth_bottom_m,
                    "label": r.label,
                    "confidence": r.confidence,
                    "runner_up": r.runner_up,
                    "runner_up_confidence": r.runner_up_confidence,
                }
                for r in self.records
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


@dataclass
class Throughput:
    tiles: int
    seconds: float

    @property
    def tiles_per_s(self) -> float:
        return self.tiles / self.seconds if self.seconds > 0 else float("inf")

    @property
    def meters_per_min(self) -> float:
        return self.tiles_per_s * TILE_DEPTH_M * 60.0

    def summary(self) -> str:
        return (
            f"{self.tiles} tiles in {self.seconds:.2f}s = "
            f"{self.tiles_per_s:.1f} tiles/s = {self.meters_per_min:.1f} m/min"
        )


def predict_depth_log(model: Model, records: list, base_dir, batch_size: int = 32):
    """Classify every tile of a well manifest in input order.

    Returns ``(DepthLog, Throughput)``. Depth gaps between consecutive tiles
    are warned about, never fatal; record order always equals input order.
    """
    if not records:
        log.warning("empty well manifest: emitting an empty depth log")
        return DepthLog(well_id=""), Throughput(0, 0.0)
    tiles = load_tiles(records, base_dir)
    in_channels = model.graph.input_shape[0]
    for t in tiles:
        if t.pixels.shape[0] != in_channels:
            raise DataError(f"tile {t.provenance_id}: {t.pixels.shape[0]} channels, model expects {in_channels}")
    prev_bottom = None
    for t in tiles:
        if prev_bottom is not None and abs(t.depth_top_m - prev_bottom) > DEPTH_GAP_TOL:
            log.warning(
                "depth gap in well %s: previous tile ends at %.3f m, next starts at %.3f m",
                t.well_id, prev_bottom, t.depth_top_m,
            )
        prev_bottom = t.depth_bottom_m

    x = np.stack([t.pixels for t in tiles]).astype(np.float32)
    start = time.perf_counter()
    probs = []
    with no_grad():
        for lo in range(0, len(x), batch_size):
            probs.append(forward(model.graph, model.params, x[lo:lo + batch_size], mode="infer").data)
    elapsed = time.perf_counter() - start
    p = np.concatenate(probs)

    order = np.argsort(p, axis=1)[:, ::-1]
    depth_log = DepthLog(well_id=tiles[0].well_id)
    for i, t in enumerate(tiles):
        top, second = order[i, 0], order[i, 1]
        depth_log.records.append(
            DepthRecord(
                well_id=t.well_id,
                depth_top_m=t.depth_top_m,
                depth_bottom_m=t.depth_bottom_m,
                label=str(model.labels[top]),
                confidence=float(p[i, top]),
                runner_up=str(model.labels[second]),
                runner_up_confidence=float(p[i, second]),
            )
        )
    return depth_log, Throughput(len(tiles), elapsed)


def write_depth_log(depth_log: DepthLog, out_dir) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "depth_log.csv"
    json_path = out / "depth_log.json"
    csv_path.write_text(depth_log.to_csv(), encoding="utf-8")
    json_path.write_text(depth_log.to_json(), encoding="utf-8")
    return csv_path, json_path
