"""Command-line surface tying the pipeline together.

Sub-commands: prepare | augment | train | eval | predict | explain |
features, plus `synth` (synthetic corpus generation) and `serve` (run the
HTTP inference service). Every command reads and writes manifests rather
than scanning directories, so provenance ids travel with each tile.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .augment import AugmentationPipeline, oversample
from .checkpoint import load_checkpoint
from .errors import DataError, LithoError, NumericError, ParameterError
from .images import (
    CLASS_NAMES,
    load_manifest,
    load_tile_pixels,
    prepare_tiles,
    save_tile_png,
    write_manifest,
)
from .interpret import explain as lime_explain
from .interpret import extract_feature_maps, model_predict_fn
from .predict import predict_depth_log, write_depth_log
from .rng import RngHandle
from .synthetic import generate_corpus, generate_well
from .training import DatasetSplit, TrainConfig, evaluate, split_dataset, train

log = logging.getLogger(__name__)


def guarded(fn):
    """Map package errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ParameterError as exc:
            click.echo(f"usage error: {exc}", err=True)
            sys.exit(2)
        except NumericError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(4)
        except (DataError, LithoError) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _load_section(config_path, section):
    if config_path is None:
        return {}
    doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
    return doc.get(section, doc if section is None else {})


@click.group()
@click.option("--seed", type=int, default=None, help="Override every configured seed.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON config file; commands read their own section.")
@click.option("--threads", type=int, default=None, help="Cap BLAS/worker threads.")
@click.option("--color", type=click.Choice(["rgb", "gray"]), default=None, help="Color regime override.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.pass_context
def main(ctx, seed, config_path, threads, color, verbose):
    """Core-image rock typing: prepare, augment, train, evaluate, predict."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if threads is not None:
        try:
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=threads)
            ctx.call_on_close(limiter.unregister)
        except ImportError:
            log.warning("threadpoolctl unavailable; --threads ignored")
    ctx.obj = {"seed": seed, "config_path": config_path, "color": color}


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--tile-cm", type=float, default=10.0, show_default=True)
@click.option("--assume-nominal-dpi", is_flag=True,
              help="Accept records without dpi at the nominal 606 px tile size.")
@click.pass_context
@guarded
def prepare(ctx, manifest, out_dir, tile_cm, assume_nominal_dpi):
    """Crop box images into normalized 227x227 tiles plus a tile manifest."""
    color = ctx.obj["color"] or "rgb"
    out = prepare_tiles(manifest, out_dir, color_mode=color, tile_cm=tile_cm,
                        assume_nominal_dpi=assume_nominal_dpi)
    n = len(load_manifest(out))
    click.echo(f"wrote {n} tiles -> {out}")


@main.command()
@click.argument("tiles_manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--pipeline", "pipeline_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Augmentation pipeline JSON (falls back to the config file's 'augment' section).")
@click.option("--target-per-class", type=int, default=None, help="Uniform oversampling target.")
@click.option("--targets", "targets_json", type=str, default=None,
              help='Per-class targets as JSON, e.g. \'{"limestone": 7000}\'.')
@click.option("--split/--no-split", "do_split", default=True, show_default=True,
              help="Hold out validation/test before augmenting.")
@click.option("--val-per-class", type=int, default=None, help="Validation draw per class (default: full protocol).")
@click.option("--test-per-class", type=int, default=None, help="Test draw per class (default: full protocol).")
@click.pass_context
@guarded
def augment(ctx, tiles_manifest, out_dir, pipeline_path, target_per_class, targets_json,
            do_split, val_per_class, test_per_class):
    """Split the corpus, then materialize a deterministic oversampled training set."""
    section = _load_section(ctx.obj["config_path"], "augment")
    if pipeline_path is not None:
        pipeline = AugmentationPipeline.load(pipeline_path)
    elif section:
        pipeline = AugmentationPipeline.from_dict(section)
    else:
        raise DataError("no augmentation pipeline: pass --pipeline or a config file with an 'augment' section")
    if ctx.obj["seed"] is not None:
        pipeline.seed = ctx.obj["seed"]

    records = load_manifest(tiles_manifest)
    base_dir = Path(tiles_manifest).parent
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # split/augmented manifests land in out_dir: original tile paths must not
    # dangle relative to it
    for rec in records:
        p = Path(rec["path"])
        if not p.is_absolute():
            rec["path"] = str((base_dir / p).resolve())

    if do_split:
        classes = sorted({str(r.get("label")) for r in records if "label" in r})
        vd = {c: val_per_class for c in classes} if val_per_class is not None else None
        td = {c: test_per_class for c in classes} if test_per_class is not None else None
        split = split_dataset(records, pipeline.seed, vd, td)
        write_manifest(split.validation, out / "split_val.jsonl")
        write_manifest(split.test, out / "split_test.jsonl")
        write_manifest(split.train, out / "split_train.jsonl")
        train_records = split.train
    else:
        train_records = records

    by_class: dict = {}
    for rec in train_records:
        by_class.setdefault(str(rec.get("label")), []).append(rec)
    if targets_json:
        targets = {str(k): int(v) for k, v in json.loads(targets_json).items()}
    elif target_per_class is not None:
        targets = {c: target_per_class for c in by_class}
    else:
        targets = {c: len(v) for c, v in by_class.items()}  # no expansion, originals only

    expanded = oversample(train_records, pipeline, targets, out, base_dir)
    write_manifest(expanded, out / "train_augmented.jsonl")
    pipeline.save(out / "pipeline_config.json")
    click.echo(f"seed={pipeline.seed} train={len(expanded)} -> {out / 'train_augmented.jsonl'}")


@main.command(name="train")
@click.argument("train_manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("val_manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.pass_context
@guarded
def train_cmd(ctx, train_manifest, val_manifest, out_dir):
    """Train per the config file's 'train' section; write checkpoints and stats."""
    section = _load_section(ctx.obj["config_path"], "train")
    config = TrainConfig.from_dict(section) if section else TrainConfig()
    if ctx.obj["seed"] is not None:
        config.seed = ctx.obj["seed"]
    if ctx.obj["color"] is not None:
        config.color_mode = ctx.obj["color"]
    split = DatasetSplit(
        train=load_manifest(train_manifest),
        validation=load_manifest(val_manifest),
        test=[],
    )
    # manifests may live in different directories; resolve each side up front
    for records, manifest in ((split.train, train_manifest), (split.validation, val_manifest)):
        base = Path(manifest).parent
        for rec in records:
            p = Path(rec["path"])
            if not p.is_absolute():
                rec["path"] = str((base / p).resolve())
    result = train(config, split, out_dir, base_dir=Path("."))
    last = result.stats[-1]
    click.echo(
        f"trained {config.arch} (width {config.width}) for {len(result.stats)} epochs; "
        f"final train_acc={last.train_acc:.3f} val_acc={last.val_acc:.3f}; "
        f"best val_acc={result.best_val_acc:.3f} -> {result.best_path}"
    )


@main.command(name="eval")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--beta", type=float, default=1.0, show_default=True)
@guarded
def eval_cmd(checkpoint, manifest, out_dir, beta):
    """Evaluate a checkpoint on a labeled manifest and emit the report."""
    model = load_checkpoint(checkpoint)
    records = load_manifest(manifest)
    report = evaluate(model, records, Path(manifest).parent, beta=beta)
    click.echo(report.to_text())
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (out / "confusion.csv").write_text(report.confusion.to_csv(), encoding="utf-8")
        click.echo(f"report files -> {out}")


@main.command(name="predict")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("well_manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@guarded
def predict_cmd(checkpoint, well_manifest, out_dir, batch_size):
    """Emit a depth-indexed lithotype log for one well, with throughput."""
    model = load_checkpoint(checkpoint)
    records = load_manifest(well_manifest)
    depth_log, throughput = predict_depth_log(model, records, Path(well_manifest).parent, batch_size)
    csv_path, _ = write_depth_log(depth_log, out_dir)
    click.echo(f"depth log: {len(depth_log.records)} records spanning {depth_log.span_m:.1f} m -> {csv_path}")
    click.echo(f"throughput: {throughput.summary()}")
    if not depth_log.records:
        log.warning("no tiles in manifest; wrote an empty depth log")


@main.command(name="explain")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("tile_png", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--class-name", default=None, help="Class to explain (default: the prediction).")
@click.option("--grid", type=int, default=7, show_default=True)
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("--top-k", type=int, default=5, show_default=True)
@click.pass_context
@guarded
def explain_cmd(ctx, checkpoint, tile_png, out_dir, class_name, grid, samples, top_k):
    """Local surrogate explanation of one tile: region weights + overlay PNG."""
    model = load_checkpoint(checkpoint)
    color = "gray" if model.graph.input_shape[0] == 1 else "rgb"
    tile = load_tile_pixels(tile_png, color)
    predict_fn = model_predict_fn(model.graph, model.params)
    probs = predict_fn(tile[None])[0]
    if class_name is None:
        class_index = int(probs.argmax())
    else:
        if class_name not in model.labels:
            raise DataError(f"class '{class_name}' not in checkpoint labels {model.labels}")
        class_index = model.labels.index(class_name)
    seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else 0
    result = lime_explain(predict_fn, tile, class_index, grid=grid, n_samples=samples,
                          rng=RngHandle(seed).child("explain"), top_k=top_k)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "class_index": class_index,
        "class_name": str(model.labels[class_index]),
        "grid": result.grid,
        "weights": result.weights.tolist(),
        "mask": [list(rc) for rc in result.mask],
        "intercept": result.intercept,
        "residual": result.residual,
        "uninformative": result.uninformative,
        "prediction": probs.tolist(),
    }
    (out / "explanation.json").write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    overlay = _mask_overlay(tile, result)
    save_tile_png(overlay, out / "explanation.png")
    if result.uninformative:
        log.warning("model output is constant around this tile; explanation is uninformative")
    click.echo(f"explained class '{model.labels[class_index]}' -> {out / 'explanation.json'}")


def _mask_overlay(tile: np.ndarray, result) -> np.ndarray:
    """Dim everything outside the top-k regions, keep selected regions bright."""
    C, H, W = tile.shape
    keep = np.zeros((H, W), dtype=bool)
    rh, cw = H // result.grid, W // result.grid
    for r, c in result.mask:
        keep[r * rh:(r + 1) * rh, c * cw:(c + 1) * cw] = True
    overlay = tile * np.where(keep, 1.0, 0.35)[None]
    return overlay.astype(np.float32)


@main.command(name="features")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("tile_png", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--layers", default=None, help="Comma-separated layer names (default: first conv).")
@click.option("--filters", "max_filters", type=int, default=4, show_default=True)
@guarded
def features_cmd(checkpoint, tile_png, out_dir, layers, max_filters):
    """Export per-filter feature-map PNGs plus a JSON sidecar of ranges."""
    model = load_checkpoint(checkpoint)
    color = "gray" if model.graph.input_shape[0] == 1 else "rgb"
    tile = load_tile_pixels(tile_png, color)
    if layers:
        names = [s.strip() for s in layers.split(",") if s.strip()]
    else:
        names = [next(s.name for s in model.graph.layers if s.kind == "conv")]
    maps = extract_feature_maps(model.graph, model.params, tile, names)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sidecar = {}
    for name, entry in maps.layers.items():
        k = min(max_filters, entry["display"].shape[0])
        safe = name.replace("/", "_").replace(".", "_")
        for f in range(k):
            save_tile_png(entry["display"][f][None], out / f"{safe}_f{f:03d}.png")
        sidecar[name] = {"filters_exported": k, "minmax": entry["minmax"][:k].tolist()}
    (out / "feature_maps.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    click.echo(f"feature maps for {len(names)} layer(s) -> {out}")


@main.command(name="synth")
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--per-class", type=int, default=None, help="Generate a labeled corpus with N tiles per class.")
@click.option("--well-tiles", type=int, default=None, help="Generate an unlabeled single-well manifest with N tiles.")
@click.pass_context
@guarded
def synth_cmd(ctx, out_dir, per_class, well_tiles):
    """Generate the versioned synthetic texture corpus."""
    seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else 0
    if per_class is None and well_tiles is None:
        raise ParameterError("pass --per-class and/or --well-tiles")
    if per_class is not None:
        manifest = generate_corpus(out_dir, per_class, seed)
        click.echo(f"corpus: {per_class} tiles x {len(CLASS_NAMES)} classes -> {manifest}")
    if well_tiles is not None:
        manifest = generate_well(out_dir, well_tiles, seed)
        click.echo(f"well: {well_tiles} tiles -> {manifest}")


@main.command(name="serve")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@guarded
def serve_cmd(checkpoint, host, port):
    """Run the HTTP inference service around a trained checkpoint."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(checkpoint), host=host, port=port)


if __name__ == "__main__":
    main()
