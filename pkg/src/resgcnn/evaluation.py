"""Confusion matrices, per-class precision/recall/F1 and report files."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class MetricsReport:
    """All percentages are in ``[0, 100]``; rows of ``confusion`` are true classes."""

    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    overall_accuracy: float
    sample_count: int
    class_names: list[str] | None = None

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetricsReport):
            return NotImplemented
        return (np.array_equal(self.confusion, other.confusion)
                and np.array_equal(self.precision, other.precision)
                and np.array_equal(self.recall, other.recall)
                and np.array_equal(self.f1, other.f1)
                and self.overall_accuracy == other.overall_accuracy
                and self.sample_count == other.sample_count
                and self.class_names == other.class_names)


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    if np.any((y_true < 0) | (y_true >= num_classes)) or np.any((y_pred < 0) | (y_pred >= num_classes)):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def report_from_confusion(confusion, class_names: list[str] | None = None) -> MetricsReport:
    """Per-class metrics from a confusion matrix.

    Recall is ``TP / (TP + FN)``. A class never predicted gets precision
    0, a class never present gets recall 0, and F1 is 0 whenever
    precision + recall is 0.
    """
    cm = np.asarray(confusion, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    total = int(cm.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    actual = cm.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    return MetricsReport(cm, 100.0 * precision, 100.0 * recall, 100.0 * f1,
                         100.0 * float(np.trace(cm)) / total, total, class_names)


def metrics(y_true, y_pred, num_classes: int, class_names: list[str] | None = None) -> MetricsReport:
    return report_from_confusion(confusion_matrix(y_true, y_pred, num_classes), class_names)


def evaluate(params, samples, lambda_mode: str = "bound", class_names: list[str] | None = None) -> MetricsReport:
    """Run the model on graph samples (or an encoded set) and score the argmax."""
    from .train import EncodedSet, encode, predict

    data = samples if isinstance(samples, EncodedSet) else encode(samples, lambda_mode)
    if len(data) == 0:
        raise ValueError("no samples to evaluate")
    return metrics(data.labels, predict(params, data), params.num_classes, class_names)


# --- serialization ---------------------------------------------------------------------------

def _round2(x) -> float:
    return float(f"{x:.2f}")


def report_to_dict(report: MetricsReport) -> dict:
    c = report.confusion.shape[0]
    names = report.class_names or [str(i) for i in range(c)]
    return {
        "sample_count": report.sample_count,
        "overall_accuracy": report.overall_accuracy,
        "confusion": report.confusion.tolist(),
        "class_names": report.class_names,
        "per_class": [
            {"class": names[i], "precision": float(report.precision[i]), "recall": float(report.recall[i]),
             "f1": float(report.f1[i])}
            for i in range(c)
        ],
        "macro": {
            "precision": _round2(report.macro_precision),
            "recall": _round2(report.macro_recall),
            "f1": _round2(report.macro_f1),
        },
    }


def report_from_dict(d: dict) -> MetricsReport:
    per = d["per_class"]
    return MetricsReport(
        np.array(d["confusion"], dtype=np.int64),
        np.array([r["precision"] for r in per], dtype=np.float64),
        np.array([r["recall"] for r in per], dtype=np.float64),
        np.array([r["f1"] for r in per], dtype=np.float64),
        float(d["overall_accuracy"]),
        int(d["sample_count"]),
        d.get("class_names"),
    )


def dumps_report(report: MetricsReport) -> str:
    d = report_to_dict(report)
    text = json.dumps(d, sort_keys=True, indent=2)
    return text + "\n"


def serialize_report(report: MetricsReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(report))
    return path


def parse_report(path) -> MetricsReport:
    return report_from_dict(json.loads(Path(path).read_text()))


def write_confusion_csv(report: MetricsReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(str(int(v)) for v in row) for row in report.confusion]
    path.write_text("\n".join(lines) + "\n")
    return path
