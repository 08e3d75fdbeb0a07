"""Binary classification and probability forecast metrics.

Confusion matrices, ROC/AUROC, Brier score and log-loss. All functions are
pure and operate on 1-D numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-12


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def size(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _as_binary(y) -> np.ndarray:
    y = np.asarray(y)
    if y.size and not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    return y.astype(np.int64)


def confusion(pd_col, y, threshold: float) -> ConfusionMatrix:
    """Confusion counts at a threshold; predicted positive iff score >= threshold."""
    pd_col = np.asarray(pd_col, dtype=np.float64)
    y = _as_binary(y)
    if pd_col.shape != y.shape:
        raise ValueError("forecast and label lengths differ")
    pred = pd_col >= threshold
    pos = y == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn, threshold=float(threshold))


def tpr(cm: ConfusionMatrix) -> float:
    """True positive rate TP/(TP+FN); 0 when the class is absent."""
    denom = cm.tp + cm.fn
    return cm.tp / denom if denom else 0.0


def fpr(cm: ConfusionMatrix) -> float:
    """False positive rate FP/(FP+TN); 0 when the class is absent."""
    denom = cm.fp + cm.tn
    return cm.fp / denom if denom else 0.0


def specificity(cm: ConfusionMatrix) -> float:
    """True negative rate TN/(TN+FP); 0 when the class is absent."""
    denom = cm.tn + cm.fp
    return cm.tn / denom if denom else 0.0


def roc_curve(scores, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC points swept over all distinct score thresholds.

    Returns (fpr, tpr, thresholds) with a leading (0, 0) point. Tied scores
    are grouped so the curve walks a diagonal segment through ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = _as_binary(y)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")

    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = y[order]
    # last index of each tied group
    distinct = np.flatnonzero(np.diff(s_sorted)) if s_sorted.size > 1 else np.array([], dtype=int)
    group_ends = np.r_[distinct, s_sorted.size - 1]
    tps = np.cumsum(y_sorted)[group_ends]
    fps = group_ends + 1 - tps
    fpr_arr = np.r_[0.0, fps / n_neg]
    tpr_arr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[np.inf, s_sorted[group_ends]]
    return fpr_arr, tpr_arr, thresholds


def roc_auc(scores, y) -> tuple[np.ndarray, float]:
    """ROC curve points and trapezoidal AUC (half credit on tied groups)."""
    fpr_arr, tpr_arr, thresholds = roc_curve(scores, y)
    auc = float(np.trapezoid(tpr_arr, fpr_arr))
    curve = np.column_stack([fpr_arr, tpr_arr, thresholds])
    return curve, auc


def youden_threshold(scores, y) -> float:
    """Threshold maximizing tpr - fpr on the ROC (ties: highest threshold)."""
    fpr_arr, tpr_arr, thresholds = roc_curve(scores, y)
    j = tpr_arr - fpr_arr
    best = int(np.argmax(j))
    t = thresholds[best]
    return float(t) if np.isfinite(t) else float(np.max(scores))


def brier(forecast, outcome) -> float:
    """Mean squared error between probability forecasts and 0/1 outcomes."""
    f = np.asarray(forecast, dtype=np.float64)
    o = np.asarray(outcome, dtype=np.float64)
    if f.shape != o.shape:
        raise ValueError("forecast and outcome lengths differ")
    return float(np.mean((f - o) ** 2))


def log_loss(forecast, outcome) -> float:
    """Mean negative log-likelihood with forecasts clamped to [1e-12, 1-1e-12]."""
    f = np.clip(np.asarray(forecast, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    o = _as_binary(outcome)
    if f.shape != o.shape:
        raise ValueError("forecast and outcome lengths differ")
    return float(-np.mean(o * np.log(f) + (1 - o) * np.log(1.0 - f)))
