"""Local explanations: exact Shapley values and perturbation surrogates.

Shapley values use full coalition enumeration with an interventional value
function: a coalition's value is the mean model output over composite rows
that take coalition features from the instance and the rest from background
rows. Attribution happens in log-odds space where additivity is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_EXACT_FEATURES = 15


class ExplainError(ValueError):
    pass


@dataclass(frozen=True)
class ShapExplanation:
    base_value: float
    phi: np.ndarray
    fx: float

    def to_dict(self) -> dict:
        return {"base_value": self.base_value, "phi": self.phi.tolist(), "fx": self.fx}


@dataclass(frozen=True)
class LimeExplanation:
    intercept: float
    coefficients: list[tuple[int, float]]  # (feature index, weight), top-k by effect size
    kernel_width: float
    local_fit_r2: float
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": [[int(j), float(w)] for j, w in self.coefficients],
            "kernel_width": self.kernel_width,
            "local_fit_r2": self.local_fit_r2,
            "n_samples": self.n_samples,
        }


def coalition_values(model_fn, x: np.ndarray, background: np.ndarray) -> np.ndarray:
    """v(S) for every subset S encoded as a bitmask 0 .. 2^m - 1."""
    m = x.size
    n_subsets = 1 << m
    n_bg = background.shape[0]
    # composite rows for all subsets in one model call
    big = np.empty((n_subsets * n_bg, m))
    for s in range(n_subsets):
        block = background.copy()
        for j in range(m):
            if s >> j & 1:
                block[:, j] = x[j]
        big[s * n_bg : (s + 1) * n_bg] = block
    out = np.asarray(model_fn(big), dtype=np.float64)
    return out.reshape(n_subsets, n_bg).mean(axis=1)


def exact_shapley(model_fn, x, background, max_features: int = MAX_EXACT_FEATURES) -> ShapExplanation:
    """Exact Shapley attribution of model_fn(x) by coalition enumeration.

    model_fn maps a (rows, m) matrix to a vector of scores. Enumeration is
    2^m, capped at max_features.
    """
    x = np.asarray(x, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    m = x.size
    if m > max_features:
        raise ExplainError(
            f"{m} features exceed the exact enumeration cap of {max_features}; "
            "pre-select features before explaining"
        )
    if background.ndim != 2 or background.shape[0] == 0:
        raise ExplainError("background must be a nonempty (rows, features) matrix")
    if background.shape[1] != m:
        raise ExplainError("background width must match the instance")

    v = coalition_values(model_fn, x, background)
    fact = [math.factorial(i) for i in range(m + 1)]
    weight = [fact[s] * fact[m - 1 - s] / fact[m] for s in range(m)]
    phi = np.zeros(m)
    sizes = np.array([bin(s).count("1") for s in range(1 << m)])
    for s in range(1 << m):
        w = weight[sizes[s]] if sizes[s] < m else 0.0
        for j in range(m):
            bit = 1 << j
            if not s & bit:
                phi[j] += w * (v[s | bit] - v[s])
    base = float(v[0])
    fx = float(v[(1 << m) - 1])
    return ShapExplanation(base_value=base, phi=phi, fx=fx)


def shapley_by_permutations(model_fn, x, background) -> np.ndarray:
    """Shapley values by averaging marginal contributions over all m!
    orderings. Exponentially slower than the coalition formula; used as an
    independent cross-check."""
    import itertools

    x = np.asarray(x, dtype=np.float64)
    m = x.size
    v = coalition_values(model_fn, x, np.asarray(background, dtype=np.float64))
    phi = np.zeros(m)
    n_perm = 0
    for perm in itertools.permutations(range(m)):
        n_perm += 1
        s = 0
        for j in perm:
            with_j = s | (1 << j)
            phi[j] += v[with_j] - v[s]
            s = with_j
    return phi / n_perm


def lime_explain(
    model_fn,
    x,
    background,
    n_samples: int = 5000,
    kernel_width: float = 1.0,
    k: int = 5,
    seed: int = 0,
    ridge: float = 1e-3,
) -> LimeExplanation:
    """Local linear surrogate around one instance.

    Each perturbed sample keeps every feature of x with probability 0.5 and
    otherwise redraws it from the background empirical distribution. Samples
    are weighted by a Gaussian kernel on standardized Euclidean distance and
    fitted with ridge regression; the top-k coefficients by |weight * feature
    std| are reported.
    """
    x = np.asarray(x, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    m = x.size
    if background.ndim != 2 or background.shape[1] != m or background.shape[0] == 0:
        raise ExplainError("background must be a nonempty matrix matching the instance width")
    if kernel_width <= 0:
        raise ExplainError("kernel_width must be positive")

    rng = np.random.default_rng(seed)
    draws = background[rng.integers(background.shape[0], size=(n_samples, m)), np.arange(m)]
    keep = rng.random((n_samples, m)) < 0.5
    Z = np.where(keep, x, draws)

    mu = background.mean(axis=0)
    sd = background.std(axis=0)
    sd[sd == 0.0] = 1.0
    dist2 = (((Z - x) / sd) ** 2).sum(axis=1)
    weights = np.exp(-dist2 / kernel_width**2)
    if weights.sum() <= n_samples * 1e-12:
        raise ExplainError("all sample weights are ~0; increase kernel_width")

    f = np.asarray(model_fn(Z), dtype=np.float64)
    Z1 = np.c_[Z, np.ones(n_samples)]
    wz = Z1 * weights[:, None]
    gram = Z1.T @ wz
    penalty = np.diag(np.r_[np.full(m, ridge), 0.0])  # intercept unpenalized
    beta = np.linalg.solve(gram + penalty, wz.T @ f)
    coef, intercept = beta[:m], float(beta[m])

    pred = Z1 @ beta
    w_mean = np.average(f, weights=weights)
    ss_res = float(np.sum(weights * (f - pred) ** 2))
    ss_tot = float(np.sum(weights * (f - w_mean) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    effect = np.abs(coef) * np.std(background, axis=0)
    top = np.argsort(-effect, kind="stable")[: min(k, m)]
    return LimeExplanation(
        intercept=intercept,
        coefficients=[(int(j), float(coef[j])) for j in top],
        kernel_width=float(kernel_width),
        local_fit_r2=float(r2),
        n_samples=int(n_samples),
    )


def summary_stats(explanations: list[ShapExplanation], X, feature_names: list[str]) -> dict:
    """Plot-ready aggregates for a batch of Shapley explanations.

    Returns long-format (feature, phi, feature_value) records, a global
    ranking by mean |phi|, per-feature dependence records, and per-instance
    waterfall records walking base .. fx in descending |phi| order.
    """
    if not explanations:
        raise ExplainError("empty explanation batch")
    X = np.asarray(X, dtype=np.float64)
    m = explanations[0].phi.size
    if X.shape != (len(explanations), m) or len(feature_names) != m:
        raise ExplainError("X and feature_names must match the explanation batch")

    phi_mat = np.vstack([e.phi for e in explanations])
    mean_abs = np.abs(phi_mat).mean(axis=0)
    ranking = [feature_names[j] for j in np.argsort(-mean_abs, kind="stable")]

    long_records = []
    for i, e in enumerate(explanations):
        for j in range(m):
            long_records.append(
                {"instance": i, "feature": feature_names[j], "phi": float(e.phi[j]), "feature_value": float(X[i, j])}
            )

    dependence = {
        feature_names[j]: [
            {"feature_value": float(X[i, j]), "phi": float(phi_mat[i, j])} for i in range(len(explanations))
        ]
        for j in range(m)
    }

    waterfalls = []
    for i, e in enumerate(explanations):
        order = np.argsort(-np.abs(e.phi), kind="stable")
        steps = [{"feature": feature_names[j], "phi": float(e.phi[j])} for j in order]
        waterfalls.append({"instance": i, "base_value": e.base_value, "steps": steps, "fx": e.fx})

    return {
        "mean_abs_phi": dict(zip(feature_names, mean_abs.tolist())),
        "ranking": ranking,
        "records": long_records,
        "dependence": dependence,
        "waterfalls": waterfalls,
    }
