"""Confusion-matrix evaluation: accuracy and weighted precision/recall/F1.

Zero-denominator convention: a precision, recall or F1 whose denominator
is empty is reported as 0.0 and the affected quantity is listed in the
report's `undefined` field, so weighted averages stay well defined.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, LabelError
from .data import class_name

HEADLINE_ORDER = ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1")


def confusion(preds, truths, num_classes: int) -> np.ndarray:
    """K x K counts; entry (t, p) = samples of true class t predicted p."""
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    t = np.asarray(truths, dtype=np.int64).reshape(-1)
    if p.shape != t.shape:
        raise ContractError(f"{p.size} predictions vs {t.size} truths")
    for name, arr in (("prediction", p), ("truth", t)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise LabelError(f"{name} index outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass
class MetricsReport:
    accuracy: float
    precision: np.ndarray  # per class
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    undefined: list[str] = field(default_factory=list)

    def headline(self) -> tuple[float, float, float, float]:
        return (self.accuracy, self.weighted_precision,
                self.weighted_recall, self.weighted_f1)


def metrics(cm: np.ndarray) -> MetricsReport:
    """Per-class and support-weighted metrics from a confusion matrix."""
    cm = np.asarray(cm)
    total = int(cm.sum())
    if total <= 0:
        raise ContractError("metrics of an empty confusion matrix")
    k = cm.shape[0]
    diag = np.diagonal(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)  # predicted counts
    row = cm.sum(axis=1).astype(np.float64)  # true counts (support)
    undefined = []
    precision = np.zeros(k)
    recall = np.zeros(k)
    f1 = np.zeros(k)
    for i in range(k):
        if col[i] > 0:
            precision[i] = diag[i] / col[i]
        else:
            undefined.append(f"precision[{i}]")
        if row[i] > 0:
            recall[i] = diag[i] / row[i]
        else:
            undefined.append(f"recall[{i}]")
        if precision[i] + recall[i] > 0:
            f1[i] = 2 * precision[i] * recall[i] / (precision[i] + recall[i])
        else:
            undefined.append(f"f1[{i}]")

    accuracy = float(diag.sum()) / total
    # support-weighted recall reduces algebraically to trace/total (each
    # class contributes support * diag/support); computing it that way
    # keeps the micro identity accuracy == weighted recall exact
    weighted_recall = float(diag[row > 0].sum()) / total
    weighted_precision = float((row * precision).sum()) / total
    weighted_f1 = float((row * f1).sum()) / total
    return MetricsReport(accuracy, precision, recall, f1,
                         row.astype(np.int64), weighted_precision,
                         weighted_recall, weighted_f1, undefined)


def report_emit(report: MetricsReport, fmt: str = "table") -> str:
    """Render a report; headline columns are ordered accuracy, weighted
    precision, weighted recall, weighted F1."""
    headline = report.headline()
    if fmt == "table":
        lines = []
        header = ["Metric", "Value"]
        rows = [("Accuracy", headline[0]),
                ("Weighted Avg. Precision", headline[1]),
                ("Weighted Avg. Recall", headline[2]),
                ("Weighted Avg. F1-Score", headline[3])]
        width = max(len(r[0]) for r in rows + [tuple(header)])
        lines.append(f"{header[0]:<{width}}  {header[1]}")
        for name, value in rows:
            lines.append(f"{name:<{width}}  {value:.4f}")
        lines.append("")
        lines.append(f"{'Class':<12} {'Prec':>8} {'Recall':>8} {'F1':>8} {'Support':>8}")
        for i in range(len(report.support)):
            lines.append(
                f"{class_name(i):<12} {report.precision[i]:>8.4f} "
                f"{report.recall[i]:>8.4f} {report.f1[i]:>8.4f} "
                f"{report.support[i]:>8d}"
            )
        if report.undefined:
            lines.append(f"undefined (reported as 0): {', '.join(report.undefined)}")
        return "\n".join(lines)
    if fmt == "csv":
        lines = ["accuracy,weighted_precision,weighted_recall,weighted_f1"]
        lines.append(",".join(f"{v:.10f}" for v in headline))
        lines.append("class,precision,recall,f1,support")
        for i in range(len(report.support)):
            lines.append(
                f"{class_name(i)},{report.precision[i]:.10f},"
                f"{report.recall[i]:.10f},{report.f1[i]:.10f},{report.support[i]}"
            )
        return "\n".join(lines)
    if fmt == "json":
        payload = {
            "accuracy": report.accuracy,
            "weighted_precision": report.weighted_precision,
            "weighted_recall": report.weighted_recall,
            "weighted_f1": report.weighted_f1,
            "per_class": [
                {
                    "class": class_name(i),
                    "precision": float(report.precision[i]),
                    "recall": float(report.recall[i]),
                    "f1": float(report.f1[i]),
                    "support": int(report.support[i]),
                }
                for i in range(len(report.support))
            ],
            "undefined": report.undefined,
        }
        return json.dumps(payload, indent=2)
    raise ContractError(f"unknown report format '{fmt}'")
