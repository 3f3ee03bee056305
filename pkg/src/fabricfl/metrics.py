"""Binary-classification evaluation: confusion counts, per-class
precision/recall, macro F1, and ROC/AUC.

Class 1 is the positive class.  Ratios are computed in exact rational
arithmetic before conversion to float, and any 0/0 ratio is defined as 0
so degenerate folds aggregate cleanly.  The ROC sweep groups tied scores
into a single threshold step, which makes the trapezoidal AUC equal the
Mann-Whitney statistic with ties counted half.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .validation import check_binary_labels, check_consistent_length

DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class EvalSummary:
    accuracy: float
    precision: dict[int, float]
    recall: dict[int, float]
    f1_macro: float


@dataclass
class EvalReport:
    accuracy: float
    f1_macro: float
    precision: dict[int, float]
    recall: dict[int, float]
    roc_points: list[tuple[float, float]]
    auc: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "precision": {str(k): v for k, v in self.precision.items()},
            "recall": {str(k): v for k, v in self.recall.items()},
            "auc": self.auc,
            "roc_points": [[fpr, tpr] for fpr, tpr in self.roc_points],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write_roc_csv(self, path: str | Path) -> None:
        lines = ["fpr,tpr"] + [f"{fpr!r},{tpr!r}" for fpr, tpr in self.roc_points]
        Path(path).write_text("\n".join(lines) + "\n")


def confusion(preds, labels) -> ConfusionMatrix:
    preds = check_binary_labels(preds, "preds")
    labels = check_binary_labels(labels, "labels")
    n = check_consistent_length(preds, labels)
    if n < 1:
        raise ValueError("need at least one sample")
    tp = int(np.sum((preds == 1) & (labels == 1)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def summarize(cm: ConfusionMatrix) -> EvalSummary:
    """Accuracy, per-class precision/recall, and macro F1 from counts."""
    if cm.total < 1:
        raise ValueError("confusion matrix is empty")
    accuracy = _ratio(cm.tp + cm.tn, cm.total)
    precision = {1: _ratio(cm.tp, cm.tp + cm.fp), 0: _ratio(cm.tn, cm.tn + cm.fn)}
    recall = {1: _ratio(cm.tp, cm.tp + cm.fn), 0: _ratio(cm.tn, cm.tn + cm.fp)}
    # Harmonic mean 2pr/(p+r) collapses to 2tp/(2tp+fp+fn) on raw counts.
    f1_pos = _ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn)
    f1_neg = _ratio(2 * cm.tn, 2 * cm.tn + cm.fn + cm.fp)
    return EvalSummary(
        accuracy=float(accuracy),
        precision={k: float(v) for k, v in precision.items()},
        recall={k: float(v) for k, v in recall.items()},
        f1_macro=float((f1_pos + f1_neg) / 2),
    )


def roc_auc(scores, labels) -> tuple[list[tuple[float, float]], float]:
    """ROC points from (0,0) to (1,1) over descending score thresholds,
    and the trapezoidal area under them.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size and not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    labels = check_binary_labels(labels, "labels")
    check_consistent_length(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc requires both classes to be present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    points: list[tuple[float, float]] = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(sorted_scores):
        j = i
        while j < len(sorted_scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        tp += int(sorted_labels[i:j].sum())
        fp += (j - i) - int(sorted_labels[i:j].sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, auc


def evaluate_scores(scores, labels, threshold: float = DECISION_THRESHOLD) -> EvalReport:
    """Full report: threshold the scores for counts, sweep them for ROC."""
    scores = np.asarray(scores, dtype=np.float64)
    preds = (scores >= threshold).astype(np.int64)
    summary = summarize(confusion(preds, labels))
    points, auc = roc_auc(scores, labels)
    return EvalReport(
        accuracy=summary.accuracy,
        f1_macro=summary.f1_macro,
        precision=summary.precision,
        recall=summary.recall,
        roc_points=points,
        auc=auc,
    )
