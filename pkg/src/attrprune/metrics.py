"""Classification metrics (macro-averaged) and partition quality."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import UsageError


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    top3_accuracy: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def confusion_counts(pred: np.ndarray, labels: np.ndarray, n_classes: int):
    """One-vs-rest (TP, FP, FN) per class."""
    tp = np.array([np.sum((pred == c) & (labels == c)) for c in range(n_classes)], dtype=np.float64)
    fp = np.array([np.sum((pred == c) & (labels != c)) for c in range(n_classes)], dtype=np.float64)
    fn = np.array([np.sum((pred != c) & (labels == c)) for c in range(n_classes)], dtype=np.float64)
    return tp, fp, fn


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def compute_metrics(pred, labels, n_classes: int) -> MetricsReport:
    """Accuracy plus macro precision/recall/F1.

    A class with no true and no predicted samples contributes 0 to each
    macro mean.
    """
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if pred.shape != labels.shape:
        raise UsageError(f"{pred.shape[0]} predictions for {labels.shape[0]} labels")
    if labels.size == 0:
        raise UsageError("no samples to score")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise UsageError(f"labels outside 0..{n_classes - 1}")
    tp, fp, fn = confusion_counts(pred, labels, n_classes)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return MetricsReport(
        accuracy=float(np.mean(pred == labels)),
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
    )


def top3_accuracy(scores: np.ndarray, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[1] < 3:
        raise UsageError("top-3 accuracy needs at least 3 classes")
    # rank each class: stable sort on -score keeps lower class index first on ties
    order = np.argsort(-scores, axis=1, kind="stable")[:, :3]
    return float(np.mean(np.any(order == labels[:, None], axis=1)))


def balanced_accuracy(flagged_noisy, truly_noisy) -> float:
    """Mean of the recall on corrupted and on clean samples."""
    flagged = np.asarray(flagged_noisy, dtype=bool)
    truth = np.asarray(truly_noisy, dtype=bool)
    parts = []
    if truth.any():
        parts.append(np.mean(flagged[truth]))
    if (~truth).any():
        parts.append(np.mean(~flagged[~truth]))
    return float(np.mean(parts))
