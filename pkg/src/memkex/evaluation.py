"""Confusion matrices, classification metrics, PR/ROC curves, learning curves.

Class index 1 is the positive class for binary metrics; multiclass metrics
are macro-averaged. Undefined ratios (zero denominators) are reported as 0
and flagged.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import FeatureMatrix, InputError, LabelVector
from . import forest as _forest


@dataclass
class ConfusionMatrix:
    """k x k table indexed [true, predicted]; counts may be fractional when
    built from a published percentage table."""

    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2 or self.table.shape[0] != self.table.shape[1]:
            raise InputError("confusion matrix must be square")
        if (self.table < 0).any():
            raise InputError("confusion matrix counts must be >= 0")

    @classmethod
    def from_binary(cls, tn, fp, fn, tp) -> "ConfusionMatrix":
        return cls(np.array([[tn, fp], [fn, tp]], dtype=np.float64))

    @property
    def total(self) -> float:
        return float(self.table.sum())

    # Binary accessors (positive class = index 1)
    @property
    def tn(self):
        return float(self.table[0, 0])

    @property
    def fp(self):
        return float(self.table[0, 1])

    @property
    def fn(self):
        return float(self.table[1, 0])

    @property
    def tp(self):
        return float(self.table[1, 1])


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: bool = False  # some ratio had a zero denominator


def confusion(y_true: LabelVector, y_pred: LabelVector) -> ConfusionMatrix:
    """Exact per-cell counts; class count taken from y_true's class list."""
    if y_true.rows != y_pred.rows:
        raise InputError(f"length mismatch: {y_true.rows} true vs {y_pred.rows} predicted")
    k = max(len(y_true.class_names), len(y_pred.class_names))
    table = np.zeros((k, k), dtype=np.float64)
    np.add.at(table, (y_true.labels, y_pred.labels), 1.0)
    return ConfusionMatrix(table)


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy/precision/recall/F1 as fractions in [0, 1].

    Binary matrices use class 1 as positive; larger matrices are
    macro-averaged over per-class one-vs-rest scores.
    """
    if cm.total == 0:
        raise InputError("empty confusion matrix")
    accuracy = float(np.trace(cm.table)) / cm.total
    undefined = False
    k = cm.table.shape[0]
    if k == 2:
        precision, u1 = _safe_div(cm.tp, cm.tp + cm.fp)
        recall, u2 = _safe_div(cm.tp, cm.tp + cm.fn)
        f1, u3 = _safe_div(2 * precision * recall, precision + recall)
        undefined = u1 or u2 or u3
    else:
        precisions, recalls, f1s = [], [], []
        for c in range(k):
            tp = cm.table[c, c]
            p, u1 = _safe_div(tp, cm.table[:, c].sum())
            r, u2 = _safe_div(tp, cm.table[c, :].sum())
            f, u3 = _safe_div(2 * p * r, p + r)
            undefined = undefined or u1 or u2 or u3
            precisions.append(p)
            recalls.append(r)
            f1s.append(f)
        precision = float(np.mean(precisions))
        recall = float(np.mean(recalls))
        f1 = float(np.mean(f1s))
    return MetricsReport(accuracy, precision, recall, f1, undefined)


@dataclass
class CurveSet:
    # PR points as (recall, precision); ROC points as (fpr, tpr)
    pr: list[tuple[float, float]]
    roc: list[tuple[float, float]]
    auc: float


def pr_curve(y_true: np.ndarray, scores: np.ndarray) -> list[tuple[float, float]]:
    """Precision-recall points swept over all distinct score thresholds."""
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    pts = []
    npos = int((y_true == 1).sum())
    for thr in np.unique(scores)[::-1]:
        pred = scores >= thr
        tp = int(((y_true == 1) & pred).sum())
        fp = int(((y_true == 0) & pred).sum())
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / npos if npos else 0.0
        pts.append((recall, precision))
    return pts


def curves(y_true: LabelVector | np.ndarray, scores) -> CurveSet:
    """PR and ROC point lists plus trapezoidal ROC AUC.

    Scores are positive-class fractions in [0, 1]. ROC needs both classes
    present in the ground truth.
    """
    labels = y_true.labels if isinstance(y_true, LabelVector) else np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise InputError("labels and scores must have the same length")
    if scores.size and (scores.min() < 0 or scores.max() > 1):
        raise InputError("scores must lie in [0, 1]")
    npos = int((labels == 1).sum())
    nneg = int((labels == 0).sum())
    if npos == 0 or nneg == 0:
        raise InputError("ROC undefined: ground truth contains a single class "
                         "(use pr_curve for the PR points)")
    roc = [(0.0, 0.0)]
    for thr in np.unique(scores)[::-1]:
        pred = scores >= thr
        tp = int(((labels == 1) & pred).sum())
        fp = int(((labels == 0) & pred).sum())
        roc.append((fp / nneg, tp / npos))
    if roc[-1] != (1.0, 1.0):
        roc.append((1.0, 1.0))
    xs = np.array([p[0] for p in roc])
    ys = np.array([p[1] for p in roc])
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    auc = float(trapezoid(ys, xs))
    return CurveSet(pr_curve(labels, scores), roc, auc)


def learning_curve(train_pool: tuple[FeatureMatrix, LabelVector],
                   val: tuple[FeatureMatrix, LabelVector],
                   sizes: list[int],
                   params: _forest.ForestParams | None = None,
                   threads: int = 1) -> list[tuple[int, MetricsReport]]:
    """Train on growing prefixes of a seed-shuffled pool, evaluate on a fixed
    validation set.

    The row permutation depends only on (pool size, params.seed), so any two
    methods sharing a seed and pool size consume identical subset indices.
    """
    params = params or _forest.ForestParams()
    X_pool, y_pool = train_pool
    X_val, y_val = val
    if sorted(sizes) != list(sizes):
        raise InputError("sizes must be ascending")
    if sizes and sizes[-1] > X_pool.rows:
        raise InputError(f"size {sizes[-1]} exceeds pool of {X_pool.rows} rows")
    rng = np.random.Generator(np.random.Philox(key=params.seed))
    perm = rng.permutation(X_pool.rows)
    out = []
    for size in sizes:
        idx = perm[:size]
        X_sub = FeatureMatrix(X_pool.values[idx], [X_pool.provenance[i] for i in idx])
        y_sub = LabelVector(y_pool.labels[idx], y_pool.class_names)
        model = _forest.train_forest(X_sub, y_sub, params, threads=threads)
        pred = _forest.predict(model, X_val.values)
        cm = confusion(y_val, LabelVector(pred, y_val.class_names))
        out.append((size, metrics(cm)))
    return out


def subset_indices(pool_rows: int, size: int, seed: int) -> np.ndarray:
    """The exact row indices a learning-curve step consumes (for audits)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    return rng.permutation(pool_rows)[:size]


# ---------------------------------------------------------------------------
# CSV output (fixed column orders, documented in the README)

def learning_curve_csv(rows: list[tuple[int, MetricsReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["size", "accuracy", "precision", "recall", "f1"])
    for size, m in rows:
        w.writerow([size, f"{m.accuracy:.6f}", f"{m.precision:.6f}",
                    f"{m.recall:.6f}", f"{m.f1:.6f}"])
    return buf.getvalue()


def curve_csv(points: list[tuple[float, float]], xname: str, yname: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([xname, yname])
    for x, y in points:
        w.writerow([f"{x:.6f}", f"{y:.6f}"])
    return buf.getvalue()


GNUPLOT_SCRIPT = """\
set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 800,600
set output "roc.png"
plot "roc.csv" using 1:2 with lines title "ROC"
set output "pr.png"
plot "pr.csv" using 1:2 with lines title "PR"
"""
