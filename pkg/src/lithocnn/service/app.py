"""HTTP inference service: a trained checkpoint served to many clients.

Wraps the core package only; the batch pipeline (prepare/augment/train)
stays on the CLI. Tiles travel as base64 PNG payloads and come back as
depth-log records, explanations, feature maps or metric reports.
"""
from __future__ import annotations

import base64
import io
import time
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image

from ..checkpoint import Model, load_checkpoint
from ..engine import no_grad
from ..errors import LithoError
from ..graph import forward
from ..images import TARGET_SIZE, normalize, resize_bilinear, to_grayscale
from ..interpret import explain as lime_explain
from ..interpret import extract_feature_maps, model_predict_fn
from ..metrics import classification_report, confusion_matrix
from ..rng import RngHandle
from . import schemas


def _decode_tile(png_base64: str, in_channels: int) -> np.ndarray:
    try:
        raw = base64.b64decode(png_base64)
        with Image.open(io.BytesIO(raw)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8).transpose(2, 0, 1)
    except Exception as exc:
        raise HTTPException(status_code=422, detail=f"cannot decode tile image: {exc}") from exc
    tile = normalize(arr)
    if tile.shape[1:] != (TARGET_SIZE, TARGET_SIZE):
        tile = resize_bilinear(tile, TARGET_SIZE, TARGET_SIZE)
    if in_channels == 1:
        tile = to_grayscale(tile)
    return tile.astype(np.float32)


def _encode_png(gray: np.ndarray) -> str:
    data = np.clip(np.rint(gray * 255.0), 0, 255).astype(np.uint8)
    im = Image.fromarray(data, mode="L")
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(checkpoint_path: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="lithocnn inference service", version="0.1.0")
    state: dict = {"model": None}
    if checkpoint_path is not None:
        state["model"] = load_checkpoint(Path(checkpoint_path))

    def model() -> Model:
        if state["model"] is None:
            raise HTTPException(status_code=503, detail="no checkpoint loaded")
        return state["model"]

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", model_loaded=state["model"] is not None)

    @app.get("/model", response_model=schemas.ModelInfoResponse)
    def model_info():
        m = model()
        return schemas.ModelInfoResponse(
            arch=m.graph.arch_id,
            depth_variant=m.graph.variant,
            width=m.width,
            classes=[str(l) for l in m.labels],
            input_shape=list(m.graph.input_shape),
        )

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict(req: schemas.PredictRequest):
        m = model()
        if not req.tiles:
            return schemas.PredictResponse(
                well_id="", span_m=0.0, records=[],
                throughput=schemas.ThroughputOut(tiles=0, seconds=0.0, tiles_per_s=0.0, meters_per_min=0.0),
            )
        tiles = [_decode_tile(t.png_base64, m.graph.input_shape[0]) for t in req.tiles]
        batch = np.stack(tiles)
        start = time.perf_counter()
        with no_grad():
            probs = forward(m.graph, m.params, batch, mode="infer").data
        elapsed = time.perf_counter() - start
        order = np.argsort(probs, axis=1)[:, ::-1]
        records = []
        for i, t in enumerate(req.tiles):
            top, second = order[i, 0], order[i, 1]
            records.append(
                schemas.DepthRecordOut(
                    well_id=t.well_id,
                    depth_top_m=t.depth_top_m,
                    depth_bottom_m=t.depth_bottom_m,
                    label=str(m.labels[top]),
                    confidence=float(probs[i, top]),
                    runner_up=str(m.labels[second]),
                    runner_up_confidence=float(probs[i, second]),
                )
            )
        tiles_per_s = len(tiles) / elapsed if elapsed > 0 else 0.0
        return schemas.PredictResponse(
            well_id=req.tiles[0].well_id,
            span_m=round(len(tiles) * 0.1, 9),
            records=records,
            throughput=schemas.ThroughputOut(
                tiles=len(tiles), seconds=elapsed,
                tiles_per_s=tiles_per_s, meters_per_min=tiles_per_s * 6.0,
            ),
        )

    @app.post("/explain", response_model=schemas.ExplainResponse)
    def explain(req: schemas.ExplainRequest):
        m = model()
        tile = _decode_tile(req.png_base64, m.graph.input_shape[0])
        predict_fn = model_predict_fn(m.graph, m.params)
        probs = predict_fn(tile[None])[0]
        if req.class_name is None:
            class_index = int(probs.argmax())
        else:
            labels = [str(l) for l in m.labels]
            if req.class_name not in labels:
                raise HTTPException(status_code=422, detail=f"class '{req.class_name}' not in {labels}")
            class_index = labels.index(req.class_name)
        try:
            result = lime_explain(
                predict_fn, tile, class_index, grid=req.grid, n_samples=req.n_samples,
                rng=RngHandle(req.seed).child("explain"), top_k=req.top_k,
            )
        except LithoError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return schemas.ExplainResponse(
            class_index=class_index,
            class_name=str(m.labels[class_index]),
            grid=result.grid,
            weights=result.weights.tolist(),
            mask=[list(rc) for rc in result.mask],
            intercept=result.intercept,
            residual=result.residual,
            uninformative=result.uninformative,
            prediction=probs.tolist(),
        )

    @app.post("/features", response_model=schemas.FeatureMapsResponse)
    def features(req: schemas.FeatureMapsRequest):
        m = model()
        tile = _decode_tile(req.png_base64, m.graph.input_shape[0])
        names = req.layers or [next(s.name for s in m.graph.layers if s.kind == "conv")]
        try:
            maps = extract_feature_maps(m.graph, m.params, tile, names)
        except LithoError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        layers = []
        for name, entry in maps.layers.items():
            k = min(req.max_filters, entry["display"].shape[0])
            layers.append(
                schemas.LayerMapsOut(
                    layer=name,
                    maps_png_base64=[_encode_png(entry["display"][f]) for f in range(k)],
                    minmax=entry["minmax"][:k].tolist(),
                )
            )
        return schemas.FeatureMapsResponse(layers=layers)

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest):
        m = model()
        try:
            cm = confusion_matrix(req.true_labels, req.pred_labels, len(m.labels), [str(l) for l in m.labels])
            rep = classification_report(cm, beta=req.beta)
        except LithoError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return schemas.ReportResponse(**rep.to_dict())

    return app
