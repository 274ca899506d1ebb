"""Confusion matrix and classification metrics.

Orientation is fixed: rows are true classes, columns are predicted classes.
Zero-denominator metrics report 0.0 and set an "undefined" flag rather than
raising, so macro averages stay comparable across runs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, ParameterError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (k, k) int64, rows true / columns predicted
    labels: list

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.labels != self.labels:
            raise DataError("cannot merge confusion matrices with different label sets")
        return ConfusionMatrix(self.counts + other.counts, list(self.labels))

    def to_csv(self) -> str:
        header = "true\\pred," + ",".join(str(l) for l in self.labels)
        rows = [header]
        for i, label in enumerate(self.labels):
            rows.append(f"{label}," + ",".join(str(int(c)) for c in self.counts[i]))
        return "\n".join(rows) + "\n"


def confusion_matrix(true_labels: Sequence[int], pred_labels: Sequence[int], k: int, labels: Optional[list] = None) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise DataError(f"label list lengths differ: {t.shape} vs {p.shape}")
    counts = np.zeros((k, k), dtype=np.int64)
    if t.size:
        if t.min() < 0 or t.max() >= k or p.min() < 0 or p.max() >= k:
            raise DataError(f"label outside [0, {k})")
        np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts, labels if labels is not None else list(range(k)))


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DataError("accuracy undefined for an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def precision(cm: ConfusionMatrix, c: int):
    """Returns (value, defined); value is 0.0 when nothing was predicted as c."""
    denom = int(cm.counts[:, c].sum())
    if denom == 0:
        return 0.0, False
    return float(int(cm.counts[c, c]) / denom), True


def recall(cm: ConfusionMatrix, c: int):
    """Returns (value, defined); value is 0.0 when class c has no support."""
    denom = int(cm.counts[c, :].sum())
    if denom == 0:
        return 0.0, False
    return float(int(cm.counts[c, c]) / denom), True


def f_beta(p: float, r: float, beta: float = 1.0) -> float:
    if beta <= 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    denom = beta * beta * p + r
    if denom == 0.0:
        return 0.0
    return (1.0 + beta * beta) * p * r / denom


@dataclass
class EvalReport:
    labels: list
    support: list
    precision: list
    recall: list
    f_beta: list
    undefined: list  # class names whose precision or recall had a zero denominator
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f_beta: float
    beta: float
    confusion: ConfusionMatrix = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "labels": [str(l) for l in self.labels],
            "support": self.support,
            "precision": self.precision,
            "recall": self.recall,
            "f_beta": self.f_beta,
            "undefined": self.undefined,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f_beta": self.macro_f_beta,
            "beta": self.beta,
            "confusion": self.confusion.counts.tolist() if self.confusion is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        width = max(12, max(len(str(l)) for l in self.labels) + 2)
        lines = [f"{'class':<{width}}{'precision':>10}{'recall':>10}{'f_beta':>10}{'support':>9}"]
        for i, label in enumerate(self.labels):
            flag = "*" if str(label) in self.undefined else " "
            lines.append(
                f"{str(label):<{width}}{self.precision[i]:>10.4f}{self.recall[i]:>10.4f}"
                f"{self.f_beta[i]:>10.4f}{self.support[i]:>8d}{flag}"
            )
        lines.append("")
        lines.append(f"{'accuracy':<{width}}{self.accuracy:>10.4f}  (n={sum(self.support)})")
        lines.append(
            f"{'macro avg':<{width}}{self.macro_precision:>10.4f}{self.macro_recall:>10.4f}{self.macro_f_beta:>10.4f}"
        )
        if self.undefined:
            lines.append(f"* zero-denominator metric reported as 0: {', '.join(self.undefined)}")
        return "\n".join(lines) + "\n"


def classification_report(cm: ConfusionMatrix, beta: float = 1.0) -> EvalReport:
    precisions, recalls, fbs, support, undefined = [], [], [], [], []
    for c in range(cm.k):
        p, p_ok = precision(cm, c)
        r, r_ok = recall(cm, c)
        precisions.append(p)
        recalls.append(r)
        fbs.append(f_beta(p, r, beta))
        support.append(int(cm.counts[c, :].sum()))
        if not (p_ok and r_ok):
            undefined.append(str(cm.labels[c]))
    return EvalReport(
        labels=list(cm.labels),
        support=support,
        precision=precisions,
        recall=recalls,
        f_beta=fbs,
        undefined=undefined,
        accuracy=accuracy(cm),
        macro_precision=float(np.mean(precisions)),
        macro_recall=float(np.mean(recalls)),
        macro_f_beta=float(np.mean(fbs)),
        beta=beta,
        confusion=cm,
    )
