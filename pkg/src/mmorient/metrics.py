"""Classification metrics from per-task confusion counts.

Zero-denominator convention: any precision/recall/F1 whose denominator is
zero is reported as 0, so macro averages stay total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionCounts:
    tp: np.ndarray  # per class
    fp: np.ndarray
    fn: np.ndarray
    total: int


@dataclass
class TaskMetrics:
    accuracy: float
    precision: float  # macro over classes
    recall: float     # macro over classes
    micro_f1: float
    macro_f1: float
    n_evaluated: int
    confusion: ConfusionCounts


def _as_int_arrays(predictions, labels):
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    true = np.asarray(labels, dtype=np.int64).ravel()
    if pred.size == 0:
        raise ValueError("metrics of an empty prediction set")
    if pred.shape != true.shape:
        raise ValueError(f"predictions ({pred.shape}) and labels ({true.shape}) differ in length")
    return pred, true


def confusion_counts(predictions, labels, n_classes):
    pred, true = _as_int_arrays(predictions, labels)
    tp = np.zeros(n_classes, dtype=np.int64)
    fp = np.zeros(n_classes, dtype=np.int64)
    fn = np.zeros(n_classes, dtype=np.int64)
    for p, t in zip(pred, true):
        if p == t:
            tp[t] += 1
        else:
            fp[p] += 1
            fn[t] += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, total=int(pred.size))


def _safe_div(num, denom):
    return num / denom if denom > 0 else 0.0


def _f1(precision, recall):
    return _safe_div(2.0 * precision * recall, precision + recall)


def accuracy(predictions, labels):
    pred, true = _as_int_arrays(predictions, labels)
    return float(np.mean(pred == true))


def micro_f1(predictions, labels, n_classes):
    """F1 of globally pooled TP/FP/FN; equals accuracy for single-label tasks."""
    c = confusion_counts(predictions, labels, n_classes)
    tp, fp, fn = int(c.tp.sum()), int(c.fp.sum()), int(c.fn.sum())
    return _f1(_safe_div(tp, tp + fp), _safe_div(tp, tp + fn))


def macro_f1(predictions, labels, n_classes):
    """Unweighted mean of per-class F1 over all ``n_classes`` classes."""
    c = confusion_counts(predictions, labels, n_classes)
    scores = []
    for k in range(n_classes):
        p = _safe_div(int(c.tp[k]), int(c.tp[k] + c.fp[k]))
        r = _safe_div(int(c.tp[k]), int(c.tp[k] + c.fn[k]))
        scores.append(_f1(p, r))
    return float(np.mean(scores))


def precision(predictions, labels, n_classes):
    """Macro-averaged precision."""
    c = confusion_counts(predictions, labels, n_classes)
    return float(np.mean([_safe_div(int(c.tp[k]), int(c.tp[k] + c.fp[k]))
                          for k in range(n_classes)]))


def recall(predictions, labels, n_classes):
    """Macro-averaged recall."""
    c = confusion_counts(predictions, labels, n_classes)
    return float(np.mean([_safe_div(int(c.tp[k]), int(c.tp[k] + c.fn[k]))
                          for k in range(n_classes)]))


def task_metrics(predictions, labels, n_classes):
    """All reported metrics for one task."""
    return TaskMetrics(
        accuracy=accuracy(predictions, labels),
        precision=precision(predictions, labels, n_classes),
        recall=recall(predictions, labels, n_classes),
        micro_f1=micro_f1(predictions, labels, n_classes),
        macro_f1=macro_f1(predictions, labels, n_classes),
        n_evaluated=int(np.asarray(predictions).size),
        confusion=confusion_counts(predictions, labels, n_classes),
    )
