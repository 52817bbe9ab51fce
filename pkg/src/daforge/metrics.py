"""Confusion matrices, imbalance-aware scores, run aggregation and timing."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


def confusion_matrix(y_true, y_pred, n_classes):
    """Rows are true classes, columns predicted classes."""
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _check(cm):
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if np.any(cm < 0):
        raise ValueError("confusion matrix has negative counts")
    if cm.sum() == 0:
        raise ValueError("confusion matrix is empty")
    return cm


def per_class_recall(cm):
    """Recall per class; NaN for classes with no true samples."""
    cm = _check(cm)
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(support > 0, np.diag(cm) / support, np.nan)


def balanced_accuracy(cm):
    """Mean recall over the classes that occur in the ground truth."""
    rec = per_class_recall(cm)
    return float(np.mean(rec[~np.isnan(rec)]))


def precision_micro(cm):
    """Sum of true positives over the sum of true and false positives.

    For single-label predictions every prediction is either a TP or an FP
    for its predicted class, so this equals ``trace(cm) / cm.sum()``.
    """
    cm = _check(cm)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    denom = tp.sum() + fp.sum()
    if denom == 0:
        raise ValueError("precision undefined: no predictions")
    return float(tp.sum() / denom)


CSV_COLUMNS = ("method", "augmented", "n", "seed", "balanced_accuracy", "precision",
               "train_seconds", "test_seconds")


@dataclass
class MetricsReport:
    balanced_accuracy: float
    precision: float
    recalls: list = field(default_factory=list)
    n_samples: int = 0
    train_seconds: float = float("nan")
    test_seconds: float = float("nan")

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes, **kw):
        cm = confusion_matrix(y_true, y_pred, n_classes)
        return cls(balanced_accuracy(cm), precision_micro(cm),
                   [float(r) for r in per_class_recall(cm)], int(cm.sum()), **kw)

    def csv_header(self):
        return ["balanced_accuracy", "precision", "n_samples", "train_seconds", "test_seconds"] + \
            [f"recall_{i}" for i in range(len(self.recalls))]

    def csv_row(self):
        return [f"{self.balanced_accuracy:.6f}", f"{self.precision:.6f}", str(self.n_samples),
                _fmt_seconds(self.train_seconds), _fmt_seconds(self.test_seconds)] + \
            [f"{r:.6f}" for r in self.recalls]

    @classmethod
    def from_csv_row(cls, header, row):
        d = dict(zip(header, row))
        recalls = [float(d[k]) for k in header if k.startswith("recall_")]
        return cls(float(d["balanced_accuracy"]), float(d["precision"]), recalls,
                   int(d["n_samples"]), _parse_seconds(d["train_seconds"]),
                   _parse_seconds(d["test_seconds"]))


def _fmt_seconds(s):
    return "" if s is None or np.isnan(s) else f"{s:.2f}"


def _parse_seconds(text):
    return float(text) if text else float("nan")


@dataclass
class Interval:
    mean: float
    half_width: float

    def __str__(self):
        return f"{100 * self.mean:.1f}% ± {100 * self.half_width:.1f}%"


def mean_ci(values, confidence=0.95):
    """Mean and Student-t confidence half-width."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        raise ValueError("need at least two values for a confidence interval")
    s = v.std(ddof=1)
    t = stats.t.ppf(0.5 + confidence / 2.0, df=len(v) - 1)
    return Interval(float(v.mean()), float(t * s / np.sqrt(len(v))))


def aggregate_runs(reports, confidence=0.95):
    """Mean ± CI half-width of balanced accuracy and precision over repeated runs."""
    if len(reports) < 2:
        raise ValueError("aggregate_runs needs at least two reports")
    return {
        "balanced_accuracy": mean_ci([r.balanced_accuracy for r in reports], confidence),
        "precision": mean_ci([r.precision for r in reports], confidence),
    }


@contextmanager
def stopwatch():
    """``with stopwatch() as sw: ...`` then read ``sw.seconds``."""
    sw = _Stopwatch()
    start = time.perf_counter()
    try:
        yield sw
    finally:
        sw.seconds = time.perf_counter() - start


class _Stopwatch:
    seconds = 0.0


def timed(fn, *args, **kwargs):
    """Run ``fn(*args, **kwargs)``; return ``(result, wall_seconds)``."""
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - start
