"""Binary logistic regression with L1 or L2 penalty.

Minimizes mean log-loss plus (1/(2c))*||w||^2 (L2) or (1/c)*||w||_1 (L1)
with an unpenalized intercept. L2 uses damped Newton steps, L1 proximal
gradient with soft-thresholding; both enforce a non-increasing objective
through backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .metrics import PROB_EPS

PENALTIES = ("none", "l1", "l2")


class LogisticFitError(ValueError):
    """Raised when the logistic fit preconditions fail."""


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    intercept: float
    penalty: str
    c: float
    converged: bool
    iterations: int
    # weights in the internally standardized space (None when standardize=False)
    scaled_weights: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "penalty": self.penalty,
            "c": self.c,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            intercept=float(d["intercept"]),
            penalty=d["penalty"],
            c=float(d["c"]),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
        )


def loss_and_grad(wb: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean log-loss plus (l2/2)*||w||^2 and its gradient; wb = [w..., intercept]."""
    w, b = wb[:-1], wb[-1]
    z = X @ w + b
    p = expit(z)
    n = y.size
    # -[y log p + (1-y) log(1-p)] = softplus(z) - y z
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
    resid = (p - y) / n
    grad = np.empty_like(wb)
    grad[:-1] = X.T @ resid + l2 * w
    grad[-1] = resid.sum()
    return loss, grad


def _l1_objective(wb: np.ndarray, X: np.ndarray, y: np.ndarray, inv_c: float) -> float:
    smooth, _ = loss_and_grad(wb, X, y, 0.0)
    return smooth + inv_c * float(np.abs(wb[:-1]).sum())


def _newton_l2(X, y, l2, tol, max_iter):
    n, p = X.shape
    wb = np.zeros(p + 1)
    loss, grad = loss_and_grad(wb, X, y, l2)
    it = 0
    converged = np.linalg.norm(grad) < tol
    while not converged and it < max_iter:
        it += 1
        z = X @ wb[:-1] + wb[-1]
        prob = expit(z)
        d = prob * (1.0 - prob) / n
        Xd = X * d[:, None]
        H = np.empty((p + 1, p + 1))
        H[:p, :p] = X.T @ Xd + l2 * np.eye(p)
        H[:p, p] = Xd.sum(axis=0)
        H[p, :p] = H[:p, p]
        H[p, p] = d.sum()
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        # halve until the objective does not increase
        alpha = 1.0
        for _ in range(50):
            candidate = wb - alpha * step
            new_loss, new_grad = loss_and_grad(candidate, X, y, l2)
            if new_loss <= loss:
                break
            alpha *= 0.5
        else:
            break
        wb, loss, grad = candidate, new_loss, new_grad
        converged = np.linalg.norm(grad) < tol
    return wb, bool(converged), it


def _prox_l1(X, y, inv_c, tol, max_iter):
    n, p = X.shape
    wb = np.zeros(p + 1)
    smooth, grad = loss_and_grad(wb, X, y, 0.0)
    # Lipschitz bound for the logistic loss gradient
    t = 4.0 * n / max(float(np.square(np.c_[X, np.ones(n)]).sum()), 1e-12)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        accepted = None
        for _ in range(60):
            cand = wb - t * grad
            cand[:-1] = np.sign(cand[:-1]) * np.maximum(np.abs(cand[:-1]) - t * inv_c, 0.0)
            delta = cand - wb
            new_smooth, new_grad = loss_and_grad(cand, X, y, 0.0)
            if new_smooth <= smooth + grad @ delta + (delta @ delta) / (2.0 * t):
                accepted = (cand, new_smooth, new_grad, delta)
                break
            t *= 0.5
        if accepted is None:
            break
        cand, new_smooth, new_grad, delta = accepted
        wb, smooth, grad = cand, new_smooth, new_grad
        if np.max(np.abs(delta)) < tol:
            converged = True
            break
        t *= 1.5
    return wb, bool(converged), it


def fit_logistic(
    X,
    y,
    penalty: str = "l2",
    c: float = 1.0,
    tol: float = 1e-8,
    max_iter: int = 200,
    standardize: bool = True,
) -> LogisticModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise LogisticFitError("X must be 2-D with one row per label")
    if not np.isfinite(X).all():
        raise LogisticFitError("X must be finite")
    if penalty not in PENALTIES:
        raise LogisticFitError(f"unknown penalty {penalty!r}")
    if c <= 0:
        raise LogisticFitError("c must be positive")
    if np.all(y == y[0] if y.size else True):
        raise LogisticFitError("target is constant; both classes required")

    if standardize:
        mu = X.mean(axis=0)
        sigma = X.std(axis=0)
        sigma[sigma == 0.0] = 1.0
        Xs = (X - mu) / sigma
    else:
        mu = np.zeros(X.shape[1])
        sigma = np.ones(X.shape[1])
        Xs = X

    if penalty == "l1":
        wb, converged, it = _prox_l1(Xs, y, 1.0 / c, tol, max_iter)
    else:
        l2 = 0.0 if penalty == "none" else 1.0 / c
        wb, converged, it = _newton_l2(Xs, y, l2, tol, max_iter)

    w_std = wb[:-1]
    w = w_std / sigma
    b = float(wb[-1] - (w_std * mu / sigma).sum())
    return LogisticModel(
        weights=w,
        intercept=b,
        penalty=penalty,
        c=float(c),
        converged=converged,
        iterations=it,
        scaled_weights=w_std if standardize else None,
    )


def predict_proba(model: LogisticModel, X) -> np.ndarray:
    """sigmoid(Xw + b) clamped into the open interval (0, 1)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.weights.size:
        raise ValueError(f"expected {model.weights.size} columns, got {X.shape[1]}")
    p = expit(X @ model.weights + model.intercept)
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
