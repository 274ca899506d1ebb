"""Pydantic request/response models for the inference service."""
from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    model_loaded: bool


class ModelInfoResponse(BaseModel):
    arch: str
    depth_variant: str
    width: float
    classes: List[str]
    input_shape: List[int]


class TileIn(BaseModel):
    png_base64: str = Field(description="PNG-encoded tile, any size; resized to 227x227 on ingest")
    well_id: str = ""
    depth_top_m: float = 0.0
    depth_bottom_m: float = 0.0


class PredictRequest(BaseModel):
    tiles: List[TileIn]


class DepthRecordOut(BaseModel):
    well_id: str
    depth_top_m: float
    depth_bottom_m: float
    label: str
    confidence: float
    runner_up: str
    runner_up_confidence: float


class ThroughputOut(BaseModel):
    tiles: int
    seconds: float
    tiles_per_s: float
    meters_per_min: float


class PredictResponse(BaseModel):
    well_id: str
    span_m: float
    records: List[DepthRecordOut]
    throughput: ThroughputOut


class ExplainRequest(BaseModel):
    png_base64: str
    class_name: Optional[str] = None
    grid: int = 7
    n_samples: int = 1000
    top_k: int = 5
    seed: int = 0


class ExplainResponse(BaseModel):
    class_index: int
    class_name: str
    grid: int
    weights: List[List[float]]
    mask: List[List[int]]
    intercept: float
    residual: float
    uninformative: bool
    prediction: List[float]


class FeatureMapsRequest(BaseModel):
    png_base64: str
    layers: Optional[List[str]] = None
    max_filters: int = 4


class LayerMapsOut(BaseModel):
    layer: str
    maps_png_base64: List[str]
    minmax: List[List[float]]


class FeatureMapsResponse(BaseModel):
    layers: List[LayerMapsOut]


class ReportRequest(BaseModel):
    true_labels: List[int]
    pred_labels: List[int]
    beta: float = 1.0


class ReportResponse(BaseModel):
    labels: List[str]
    support: List[int]
    precision: List[float]
    recall: List[float]
    f_beta: List[float]
    undefined: List[str]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f_beta: float
    beta: float
    confusion: List[List[int]]
