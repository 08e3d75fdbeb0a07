"""Probability calibration on top of the boosted-tree classifier.

The calibrator is an L2 logistic regression on one-hot encoded leaf
assignments. The one-hot design is never materialized: each row activates
exactly one column per tree, so scores and gradients reduce to indexed sums,
which keeps the fit fast even with thousands of leaf columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import boosting
from .dataset import Dataset
from .logistic import LogisticModel
from .metrics import PROB_EPS, log_loss


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class Calibrator:
    leaf_counts: list[int]  # leaves per tree; column = offset[tree] + leaf_id
    lr: LogisticModel
    c: float

    @property
    def offsets(self) -> np.ndarray:
        return np.r_[0, np.cumsum(self.leaf_counts)[:-1]].astype(np.int64)

    @property
    def n_columns(self) -> int:
        return int(sum(self.leaf_counts))

    def to_dict(self) -> dict:
        return {"format_version": 1, "leaf_counts": self.leaf_counts, "c": self.c, "lr": self.lr.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Calibrator":
        return cls(leaf_counts=[int(x) for x in d["leaf_counts"]], lr=LogisticModel.from_dict(d["lr"]), c=float(d["c"]))


def leaf_columns(model: boosting.GbdtModel, rows) -> np.ndarray:
    """Active one-hot column index per (row, tree)."""
    ids = boosting.leaf_indices(model, rows)
    counts = np.array([t.n_leaves for t in model.trees], dtype=np.int64)
    offsets = np.r_[0, np.cumsum(counts)[:-1]]
    return ids.astype(np.int64) + offsets[None, :]


def one_hot_design(model: boosting.GbdtModel, rows) -> np.ndarray:
    """Dense 0/1 design matrix of leaf assignments (small models only)."""
    cols = leaf_columns(model, rows)
    n_cols = int(sum(t.n_leaves for t in model.trees))
    out = np.zeros((cols.shape[0], n_cols))
    out[np.arange(cols.shape[0])[:, None], cols] = 1.0
    return out


def _fit_leaf_logistic(cols, y, n_cols, inv_c, tol=1e-6, max_iter=2000, warm=None):
    """Diagonally preconditioned descent on the L2 logistic objective.

    cols holds the active column per (row, tree); the intercept is
    unpenalized. Backtracking keeps the objective non-increasing.
    """
    n, n_trees = cols.shape
    flat = cols.ravel()
    w = np.zeros(n_cols) if warm is None else warm[0].copy()
    b = 0.0 if warm is None else warm[1]

    def score(wv, bv):
        return bv + wv[cols].sum(axis=1)

    def objective(wv, bv):
        z = score(wv, bv)
        return float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * inv_c * float(wv @ wv)

    obj = objective(w, b)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        z = score(w, b)
        p = expit(z)
        r = (p - y) / n
        grad_w = np.bincount(flat, weights=np.repeat(r, n_trees), minlength=n_cols) + inv_c * w
        grad_b = float(r.sum())
        gnorm = max(float(np.max(np.abs(grad_w))), abs(grad_b))
        if gnorm < tol:
            converged = True
            break
        d = p * (1.0 - p) / n
        diag_w = np.bincount(flat, weights=np.repeat(d, n_trees), minlength=n_cols) + inv_c
        diag_b = float(d.sum())
        step_w = grad_w / np.maximum(diag_w, 1e-12)
        step_b = grad_b / max(diag_b, 1e-12)
        alpha = 1.0
        for _ in range(40):
            w_new = w - alpha * step_w
            b_new = b - alpha * step_b
            new_obj = objective(w_new, b_new)
            if new_obj <= obj:
                break
            alpha *= 0.5
        else:
            break
        w, b, obj = w_new, b_new, new_obj
    return w, b, converged, it


def _predict_from_cols(cols, w, b) -> np.ndarray:
    p = expit(b + w[cols].sum(axis=1))
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def fit_calibrator(
    model: boosting.GbdtModel,
    ds_calib: Dataset,
    c_grid,
    oot_holdout: Dataset,
    tol: float = 1e-6,
    max_iter: int = 2000,
) -> Calibrator:
    """Fit the leaf calibrator on ds_calib for each c in the grid and keep the
    c with the lowest log-loss on the holdout.

    ds_calib must be disjoint from the classifier's training rows; the caller
    is responsible for that bookkeeping.
    """
    c_values = list(c_grid)
    if not c_values:
        raise CalibrationError("c_grid must not be empty")
    if any(c <= 0 for c in c_values):
        raise CalibrationError("all c values must be positive")
    if not model.trees:
        raise CalibrationError("model has no trees to calibrate on")

    leaf_counts = [t.n_leaves for t in model.trees]
    n_cols = int(sum(leaf_counts))
    cols_fit = leaf_columns(model, ds_calib)
    cols_hold = leaf_columns(model, oot_holdout)
    y_fit = ds_calib.target.astype(np.float64)
    y_hold = oot_holdout.target

    best = None
    warm = None
    for c in sorted(c_values):
        w, b, converged, it = _fit_leaf_logistic(
            cols_fit, y_fit, n_cols, inv_c=1.0 / c, tol=tol, max_iter=max_iter, warm=warm
        )
        warm = (w, b)
        holdout_ll = log_loss(_predict_from_cols(cols_hold, w, b), y_hold)
        if best is None or holdout_ll < best[0]:
            lr = LogisticModel(
                weights=w.copy(), intercept=float(b), penalty="l2", c=float(c), converged=converged, iterations=it
            )
            best = (holdout_ll, Calibrator(leaf_counts=leaf_counts, lr=lr, c=float(c)))
    return best[1]


def calibrated_pd(cal: Calibrator, model: boosting.GbdtModel, rows) -> np.ndarray:
    """Calibrated PD: the leaf logistic applied to the rows' leaf patterns."""
    cols = leaf_columns(model, rows)
    return _predict_from_cols(cols, cal.lr.weights, cal.lr.intercept)


@dataclass(frozen=True)
class ReliabilityCurve:
    bin_edges: np.ndarray  # n_bins + 1 edges over [0, 1]
    mean_pred: np.ndarray  # NaN for empty bins
    obs_freq: np.ndarray  # NaN for empty bins
    count: np.ndarray

    def to_rows(self) -> list[dict]:
        rows = []
        for i in range(self.count.size):
            rows.append(
                {
                    "bin_low": float(self.bin_edges[i]),
                    "bin_high": float(self.bin_edges[i + 1]),
                    "mean_pred": None if np.isnan(self.mean_pred[i]) else float(self.mean_pred[i]),
                    "obs_freq": None if np.isnan(self.obs_freq[i]) else float(self.obs_freq[i]),
                    "count": int(self.count[i]),
                }
            )
        return rows


def reliability_curve(pd_col, y, n_bins: int = 10) -> ReliabilityCurve:
    """Observed default frequency vs mean forecast in equal-width bins."""
    pd_col = np.asarray(pd_col, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pd_col.shape != y.shape:
        raise ValueError("forecast and outcome lengths differ")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    idx = np.minimum((pd_col * n_bins).astype(np.int64), n_bins - 1)
    count = np.bincount(idx, minlength=n_bins).astype(np.int64)
    sum_pred = np.bincount(idx, weights=pd_col, minlength=n_bins)
    sum_y = np.bincount(idx, weights=y, minlength=n_bins)
    with np.errstate(invalid="ignore"):
        mean_pred = np.where(count > 0, sum_pred / np.maximum(count, 1), np.nan)
        obs_freq = np.where(count > 0, sum_y / np.maximum(count, 1), np.nan)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    return ReliabilityCurve(bin_edges=edges, mean_pred=mean_pred, obs_freq=obs_freq, count=count)
