"""Confusion-matrix statistics, ROC curves and micro/macro aggregates."""

import warnings
from dataclasses import dataclass, field

import numpy as np

MACRO_FPR_GRID_POINTS = 101


def confusion(true_labels, predicted_labels, n_classes: int = 3) -> np.ndarray:
    """Counts matrix with rows = true class, cols = predicted class."""
    t = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size and (t.min() < 0 or t.max() >= n_classes or p.min() < 0
                   or p.max() >= n_classes):
        raise ValueError(f"labels out of range for {n_classes} classes")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (t, p), 1)
    return matrix


@dataclass
class MetricsSummary:
    accuracy: float
    precision: np.ndarray  # per class
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    zero_division_flags: list = field(default_factory=list)


def summary(matrix: np.ndarray) -> MetricsSummary:
    """Per-class precision/recall/F1 plus accuracy and micro/macro averages.

    Zero-denominator cells yield 0 and are flagged with a warning, matching
    common tooling.
    """
    matrix = np.asarray(matrix)
    total = matrix.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    k = matrix.shape[0]
    tp = np.diag(matrix).astype(float)
    pred_per_class = matrix.sum(axis=0).astype(float)
    true_per_class = matrix.sum(axis=1).astype(float)

    flags = []

    def _safe_div(num, den, name, i):
        if den == 0:
            flags.append(f"{name}[{i}]")
            warnings.warn(f"zero denominator for {name} of class {i}; using 0",
                          RuntimeWarning, stacklevel=3)
            return 0.0
        return num / den

    precision = np.array([_safe_div(tp[i], pred_per_class[i], "precision", i)
                          for i in range(k)])
    recall = np.array([_safe_div(tp[i], true_per_class[i], "recall", i)
                       for i in range(k)])
    f1 = np.array([
        _safe_div(2 * tp[i], 2 * tp[i] + (pred_per_class[i] - tp[i])
                  + (true_per_class[i] - tp[i]), "f1", i)
        for i in range(k)
    ])

    accuracy = float(tp.sum() / total)
    # pooled counts: for single-label multi-class, micro P = micro R = accuracy
    micro_precision = float(tp.sum() / pred_per_class.sum())
    micro_recall = float(tp.sum() / true_per_class.sum())
    micro_f1 = float(
        2 * micro_precision * micro_recall / (micro_precision + micro_recall)
        if micro_precision + micro_recall > 0 else 0.0
    )
    return MetricsSummary(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        support=true_per_class.astype(int),
        micro_precision=micro_precision,
        micro_recall=micro_recall,
        micro_f1=micro_f1,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        zero_division_flags=flags,
    )


@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending, with a +inf sentinel first
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def _binary_roc(is_positive: np.ndarray, scores: np.ndarray) -> RocCurve:
    n_pos = int(is_positive.sum())
    n_neg = int(is_positive.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative examples")
    order = np.argsort(-scores, kind="stable")
    sorted_pos = is_positive[order]
    sorted_scores = scores[order]
    tp_cum = np.cumsum(sorted_pos)
    fp_cum = np.cumsum(~sorted_pos)
    # keep only the last point of each tied-score run
    distinct = np.append(np.diff(sorted_scores) != 0, True)
    thresholds = np.concatenate(([np.inf], sorted_scores[distinct]))
    tpr = np.concatenate(([0.0], tp_cum[distinct] / n_pos))
    fpr = np.concatenate(([0.0], fp_cum[distinct] / n_neg))
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=auc)


def roc_curve(true_labels, class_scores: np.ndarray, positive_class: int) -> RocCurve:
    """One-vs-rest ROC for one class column of a (n, classes) score matrix.

    Thresholds sweep the distinct scores in descending order, preceded by a
    +inf sentinel so the curve starts at (0, 0); AUC is trapezoidal.
    """
    t = np.asarray(true_labels)
    scores = np.asarray(class_scores, dtype=float)
    if scores.ndim != 2:
        raise ValueError("class_scores must be (n, classes)")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return _binary_roc(t == positive_class, scores[:, positive_class])


def micro_average_roc(true_labels, class_scores: np.ndarray) -> RocCurve:
    """ROC over all (one-vs-rest indicator, score) pairs pooled across classes."""
    t = np.asarray(true_labels)
    scores = np.asarray(class_scores, dtype=float)
    n_classes = scores.shape[1]
    indicators = np.concatenate([t == c for c in range(n_classes)])
    pooled = np.concatenate([scores[:, c] for c in range(n_classes)])
    return _binary_roc(indicators, pooled)


def macro_average_roc(true_labels, class_scores: np.ndarray) -> RocCurve:
    """Mean of per-class curves interpolated onto a shared FPR grid."""
    scores = np.asarray(class_scores, dtype=float)
    grid = np.linspace(0.0, 1.0, MACRO_FPR_GRID_POINTS)
    tprs = []
    for c in range(scores.shape[1]):
        curve = roc_curve(true_labels, scores, c)
        tprs.append(np.interp(grid, curve.fpr, curve.tpr))
    mean_tpr = np.mean(tprs, axis=0)
    mean_tpr[0] = 0.0
    auc = float(np.trapezoid(mean_tpr, grid))
    return RocCurve(thresholds=np.full(grid.shape, np.nan), fpr=grid,
                    tpr=mean_tpr, auc=auc)


@dataclass
class EvalReport:
    matrix: np.ndarray
    summary: MetricsSummary
    per_class_roc: list
    micro_roc: RocCurve
    macro_roc: RocCurve


def evaluate(true_labels, class_scores: np.ndarray, n_classes: int = 3) -> EvalReport:
    """Full report from labels and per-class probability rows."""
    scores = np.asarray(class_scores, dtype=float)
    predicted = scores.argmax(axis=1)
    matrix = confusion(true_labels, predicted, n_classes=n_classes)
    return EvalReport(
        matrix=matrix,
        summary=summary(matrix),
        per_class_roc=[roc_curve(true_labels, scores, c) for c in range(n_classes)],
        micro_roc=micro_average_roc(true_labels, scores),
        macro_roc=macro_average_roc(true_labels, scores),
    )
