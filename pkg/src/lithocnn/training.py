"""Dataset splitting, the training loop, epoch evaluation and checkpointing.

Training is deterministic end to end for a fixed (config, seed): weight
init, per-epoch shuffles and per-step dropout all draw from streams derived
off the config seed, so two identical runs produce byte-identical
checkpoints and epoch statistics.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .architectures import build_architecture
from .checkpoint import Model, save_checkpoint
from .engine import Tensor, cross_entropy_loss, no_grad
from .errors import DataError, NumericError, ParameterError, SplitError
from .graph import TRAINABLE_SLOTS, forward
from .images import CLASS_NAMES, load_tiles
from .metrics import EvalReport, classification_report, confusion_matrix
from .optim import LRSchedule, OptimizerState, optimizer_step
from .rng import RngHandle

log = logging.getLogger(__name__)

# Full-protocol held-out draw: 110 tiles per class, 50 for limestone,
# into validation and again into test (6 classes -> 600 + 600).
PAPER_DRAW_DEFAULT = 110
PAPER_DRAW_LIMESTONE = 50


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list

    def counts(self) -> dict:
        return {"train": len(self.train), "validation": len(self.validation), "test": len(self.test)}


def paper_draws(classes: Sequence[str]) -> dict:
    return {c: (PAPER_DRAW_LIMESTONE if c == "limestone" else PAPER_DRAW_DEFAULT) for c in classes}


def split_dataset(
    records: list,
    seed: int,
    val_per_class: Optional[dict] = None,
    test_per_class: Optional[dict] = None,
) -> DatasetSplit:
    """Draw per-class validation and test sets, the remainder trains.

    Defaults follow the full protocol (110 per class, 50 for limestone, for
    each held-out set). The draw happens before any augmentation and is
    deterministic under the seed; every class must retain at least one
    training sample.
    """
    by_class: dict = {}
    for rec in records:
        if "label" not in rec:
            raise DataError(f"record without label cannot be split: {rec.get('path')}")
        by_class.setdefault(str(rec["label"]), []).append(rec)
    if not by_class:
        raise DataError("empty manifest: nothing to split")

    classes = sorted(by_class)
    val_draws = val_per_class if val_per_class is not None else paper_draws(classes)
    test_draws = test_per_class if test_per_class is not None else paper_draws(classes)

    shortfalls = []
    for c in classes:
        need = val_draws.get(c, 0) + test_draws.get(c, 0) + 1
        if len(by_class[c]) < need:
            shortfalls.append(f"{c}: have {len(by_class[c])}, need >= {need}")
    if shortfalls:
        raise SplitError("classes too small for the requested split: " + "; ".join(shortfalls))

    split = DatasetSplit([], [], [])
    rng = RngHandle(seed).child("split")
    for c in classes:
        members = sorted(by_class[c], key=lambda r: str(r.get("provenance_id", r["path"])))
        perm = rng.child(c).generator().permutation(len(members))
        nv, nt = val_draws.get(c, 0), test_draws.get(c, 0)
        ordered = [members[i] for i in perm]
        split.validation.extend(ordered[:nv])
        split.test.extend(ordered[nv:nv + nt])
        split.train.extend(ordered[nv + nt:])
    return split


@dataclass
class TrainConfig:
    arch: str = "alexnet"
    width: float = 1.0
    depth_variant: Optional[str] = None
    color_mode: str = "rgb"
    classes: list = field(default_factory=lambda: list(CLASS_NAMES))
    optimizer: str = "adam"
    schedule: LRSchedule = field(default_factory=LRSchedule)
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = LRSchedule.from_dict(self.schedule)
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.color_mode not in ("rgb", "gray"):
            raise ParameterError(f"color_mode must be rgb|gray, got {self.color_mode}")
        if len(self.classes) < 2:
            raise ParameterError("need at least two classes")

    @property
    def in_channels(self) -> int:
        return 1 if self.color_mode == "gray" else 3

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "width": self.width,
            "depth_variant": self.depth_variant,
            "color_mode": self.color_mode,
            "classes": list(self.classes),
            "optimizer": self.optimizer,
            "schedule": self.schedule.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "schedule" in d and isinstance(d["schedule"], dict):
            d["schedule"] = LRSchedule.from_dict(d["schedule"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float

    CSV_HEADER = "epoch,lr,train_loss,train_acc,val_loss,val_acc"

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.lr:.10g},{self.train_loss:.10g},{self.train_acc:.10g},"
            f"{self.val_loss:.10g},{self.val_acc:.10g}"
        )


def write_stats_csv(stats: Sequence[EpochStats], path) -> None:
    lines = [EpochStats.CSV_HEADER] + [s.csv_row() for s in stats]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class TrainResult:
    stats: list
    best_path: Path
    final_path: Path
    best_val_acc: float


def _records_to_arrays(records: list, base_dir, classes: list, in_channels: int):
    if not records:
        raise DataError("empty tile manifest")
    tiles = load_tiles(records, base_dir)
    index = {name: i for i, name in enumerate(classes)}
    xs, ys = [], []
    for tile in tiles:
        if tile.pixels.shape[0] != in_channels:
            raise DataError(
                f"tile {tile.provenance_id}: {tile.pixels.shape[0]} channels, model expects {in_channels}"
            )
        if tile.label is None:
            raise DataError(f"tile {tile.provenance_id} is unlabeled")
        name = tile.label.canonical
        if name not in index:
            raise DataError(f"label '{name}' not in model class list {classes}")
        xs.append(tile.pixels)
        ys.append(index[name])
    return np.stack(xs).astype(np.float32), np.asarray(ys, dtype=np.int64)


def _graph_has_batch_norm(graph) -> bool:
    def specs(items):
        for spec in items:
            yield spec.kind, spec.params
            for key in ("branches",):
                for branch in spec.params.get(key, []) or []:
                    for d in branch:
                        yield d["kind"], d.get("params", {})
            for key in ("main", "projection"):
                for d in spec.params.get(key) or []:
                    yield d["kind"], d.get("params", {})

    return any(kind == "batch_norm" for kind, _ in specs(graph.layers))


def _wrap_trainable(params: dict):
    tensors = {}
    wrapped = {}
    for layer, slots in params.items():
        wrapped[layer] = {}
        for slot, arr in slots.items():
            if slot in TRAINABLE_SLOTS:
                t = Tensor(arr, requires_grad=True)
                wrapped[layer][slot] = t
                tensors[f"{layer}/{slot}"] = t
            else:
                wrapped[layer][slot] = arr
    return wrapped, tensors


def _unwrap(wrapped: dict) -> dict:
    return {
        layer: {slot: (v.data if isinstance(v, Tensor) else v) for slot, v in slots.items()}
        for layer, slots in wrapped.items()
    }


def _grad_norm_summary(tensors: dict) -> str:
    norms = {
        name: float(np.linalg.norm(t.grad)) for name, t in tensors.items() if t.grad is not None
    }
    if not norms:
        return "no gradients recorded"
    worst = sorted(norms.items(), key=lambda kv: -kv[1])[:3]
    return ", ".join(f"{n}={v:.3e}" for n, v in worst)


def _eval_arrays(graph, params, x, y, batch_size):
    losses, hits = [], 0
    with no_grad():
        for start in range(0, len(x), batch_size):
            xb = x[start:start + batch_size]
            yb = y[start:start + batch_size]
            probs = forward(graph, params, xb, mode="infer")
            losses.append(float(cross_entropy_loss(probs, yb).data) * len(xb))
            hits += int((probs.data.argmax(axis=1) == yb).sum())
    return sum(losses) / len(x), hits / len(x)


def train(
    config: TrainConfig,
    split: DatasetSplit,
    out_dir,
    base_dir,
    stop_at_train_acc: Optional[float] = None,
) -> TrainResult:
    """Run the full loop: shuffled mini-batches, per-epoch validation,
    best/final checkpoints, stats CSV and a run manifest.

    ``stop_at_train_acc`` ends training early once the epoch's training
    accuracy reaches the threshold (the epoch budget still caps the run).
    """
    out = Path(out_dir)
    graph = build_architecture(
        config.arch, len(config.classes), config.in_channels, config.width, config.depth_variant
    )
    has_bn = _graph_has_batch_norm(graph)
    if has_bn and config.batch_size < 2:
        raise ParameterError("batch_size must be >= 2 for architectures with batch normalization")

    out.mkdir(parents=True, exist_ok=True)
    x_train, y_train = _records_to_arrays(split.train, base_dir, config.classes, config.in_channels)
    x_val, y_val = _records_to_arrays(split.validation, base_dir, config.classes, config.in_channels)

    root = RngHandle(config.seed)
    params = graph.init_params(root.child("init"))
    wrapped, tensors = _wrap_trainable(params)
    opt_state = OptimizerState.create(config.optimizer)

    stats: list = []
    best_val_acc = -1.0
    best_path = out / "checkpoint_best.lcn"
    final_path = out / "checkpoint_final.lcn"
    n = len(x_train)

    for epoch in range(config.epochs):
        lr = config.schedule.at(epoch)
        perm = root.child("shuffle", epoch).generator().permutation(n)
        epoch_loss = 0.0
        epoch_hits = 0
        seen = 0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            if has_bn and len(idx) < 2:
                continue  # degenerate remainder batch cannot feed batch norm
            xb, yb = x_train[idx], y_train[idx]
            probs = forward(graph, wrapped, xb, mode="train", rng=root.child("step", epoch, bi))
            loss = cross_entropy_loss(probs, yb)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {bi} (lr={lr:.3e}); "
                    f"largest recent grad norms: {_grad_norm_summary(tensors)}"
                )
            loss.backward()
            flat_params = {name: t.data for name, t in tensors.items()}
            flat_grads = {name: t.grad for name, t in tensors.items() if t.grad is not None}
            missing = set(flat_params) - set(flat_grads)
            for name in missing:  # layers skipped this step (e.g. behind dropout zeros)
                flat_grads[name] = np.zeros_like(flat_params[name])
            optimizer_step(flat_params, flat_grads, opt_state, lr)
            for t in tensors.values():
                t.grad = None
            epoch_loss += loss_val * len(idx)
            epoch_hits += int((probs.data.argmax(axis=1) == yb).sum())
            seen += len(idx)

        val_loss, val_acc = _eval_arrays(graph, _unwrap(wrapped), x_val, y_val, config.batch_size)
        entry = EpochStats(
            epoch=epoch,
            lr=lr,
            train_loss=epoch_loss / max(seen, 1),
            train_acc=epoch_hits / max(seen, 1),
            val_loss=val_loss,
            val_acc=val_acc,
        )
        stats.append(entry)
        log.info(
            "epoch %d lr=%.2e train_loss=%.4f train_acc=%.3f val_loss=%.4f val_acc=%.3f",
            entry.epoch, entry.lr, entry.train_loss, entry.train_acc, entry.val_loss, entry.val_acc,
        )
        if val_acc > best_val_acc:
            best_val_acc = val_acc
            save_checkpoint(Model(graph, _unwrap(wrapped), list(config.classes), config.width), best_path)
        if stop_at_train_acc is not None and entry.train_acc >= stop_at_train_acc:
            break

    save_checkpoint(Model(graph, _unwrap(wrapped), list(config.classes), config.width), final_path)
    write_stats_csv(stats, out / "epoch_stats.csv")
    _write_run_manifest(config, split, out)
    return TrainResult(stats=stats, best_path=best_path, final_path=final_path, best_val_acc=best_val_acc)


def _manifest_digest(records: list) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(json.dumps(rec, sort_keys=True).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def _write_run_manifest(config: TrainConfig, split: DatasetSplit, out: Path) -> None:
    doc = {
        "config": config.to_dict(),
        "split_counts": split.counts(),
        "corpus_digests": {
            "train": _manifest_digest(split.train),
            "validation": _manifest_digest(split.validation),
            "test": _manifest_digest(split.test),
        },
    }
    (out / "run_manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def evaluate(model: Model, records: list, base_dir, batch_size: int = 64, beta: float = 1.0) -> EvalReport:
    """Inference over a labeled manifest, reported via the metrics module."""
    if not records:
        raise DataError("empty manifest: nothing to evaluate")
    manifest_labels = {str(r.get("label")) for r in records if "label" in r}
    unknown = manifest_labels - set(model.labels)
    if unknown:
        raise DataError(f"manifest labels {sorted(unknown)} not in checkpoint class list {model.labels}")
    x, y = _records_to_arrays(records, base_dir, model.labels, model.graph.input_shape[0])
    preds = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            probs = forward(model.graph, model.params, x[start:start + batch_size], mode="infer")
            preds.append(probs.data.argmax(axis=1))
    cm = confusion_matrix(y, np.concatenate(preds), len(model.labels), list(model.labels))
    return classification_report(cm, beta=beta)
