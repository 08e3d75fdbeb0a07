"""Voting feature selection over six scoring methods.

Pearson and chi-squared filters, recursive feature elimination and L1
logistic selection, plus gain importances from bagged trees and a small
boosted ensemble. Each method nominates its top k features; the features
with the most votes win.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import boosting
from .dataset import Dataset
from .logistic import fit_logistic


@dataclass(frozen=True)
class SelectionReport:
    rankings: dict[str, list[str]]  # method -> ranked feature names, best first
    votes: dict[str, int]
    selected: list[str]
    k_per_method: int

    def to_dict(self) -> dict:
        return {
            "rankings": self.rankings,
            "votes": self.votes,
            "selected": self.selected,
            "k_per_method": self.k_per_method,
        }


def _impute_median(X: np.ndarray) -> np.ndarray:
    out = X.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nan = np.isnan(col)
        if nan.any():
            finite = col[~nan]
            col[nan] = np.median(finite) if finite.size else 0.0
    return out


def pearson_scores(ds: Dataset) -> dict[str, float]:
    """Absolute Pearson correlation of each feature with the target.

    Missing entries are dropped pairwise; zero-variance features score 0.
    """
    y = ds.target.astype(np.float64)
    scores = {}
    for j, name in enumerate(ds.feature_names):
        col = ds.features[:, j]
        ok = ~np.isnan(col)
        x = col[ok]
        t = y[ok]
        if x.size < 2 or x.std() == 0.0 or t.std() == 0.0:
            scores[name] = 0.0
            continue
        r = np.corrcoef(x, t)[0, 1]
        scores[name] = float(abs(r))
    return scores


def _equal_frequency_bins(x: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin assignment with edges at order-statistic quantiles.

    Edges are actual data values (inverted-cdf quantiles) so strictly
    monotone transformations of x leave the assignment unchanged.
    Duplicate edges merge, so a constant column collapses to one bin.
    """
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    edges = np.unique(np.quantile(x, qs, method="inverted_cdf"))
    return np.searchsorted(edges, x, side="left")


def chi2_scores(ds: Dataset, n_bins: int = 10) -> dict[str, float]:
    """Chi-squared statistic of the bin-by-class contingency table per
    feature, with equal-frequency binning. Higher means more dependent."""
    y = ds.target
    scores = {}
    for j, name in enumerate(ds.feature_names):
        col = ds.features[:, j]
        ok = ~np.isnan(col)
        x = col[ok]
        t = y[ok]
        if x.size == 0 or t.size == 0:
            scores[name] = 0.0
            continue
        bins = _equal_frequency_bins(x, n_bins)
        n_b = int(bins.max()) + 1
        obs = np.zeros((n_b, 2))
        np.add.at(obs, (bins, t), 1.0)
        occupied = obs.sum(axis=1) > 0
        obs = obs[occupied]
        row_tot = obs.sum(axis=1, keepdims=True)
        col_tot = obs.sum(axis=0, keepdims=True)
        expected = row_tot * col_tot / obs.sum()
        nz = expected > 0
        chi2 = float(((obs[nz] - expected[nz]) ** 2 / expected[nz]).sum())
        scores[name] = chi2
    return scores


def rfe(ds: Dataset, n_keep: int, step: int = 1, c: float = 1.0) -> list[str]:
    """Recursive elimination with an L2 logistic estimator on standardized
    features; drops the `step` smallest |standardized weight| features per
    round. Returns the full ranking, best first."""
    if n_keep < 1:
        raise ValueError("n_keep must be >= 1")
    X = _impute_median(ds.features)
    y = ds.target
    remaining = list(range(len(ds.feature_names)))
    eliminated: list[int] = []
    while len(remaining) > n_keep:
        model = fit_logistic(X[:, remaining], y, penalty="l2", c=c, max_iter=100, standardize=True)
        if not model.converged:
            warnings.warn("RFE estimator did not converge; ranking continues", stacklevel=2)
        order = np.argsort(np.abs(model.scaled_weights), kind="stable")
        n_drop = min(step, len(remaining) - n_keep)
        drop = [remaining[i] for i in order[:n_drop]]
        for d in drop:
            eliminated.append(d)
            remaining.remove(d)
    ranking = remaining + list(reversed(eliminated))
    return [ds.feature_names[i] for i in ranking]


def l1_select(ds: Dataset, c: float = 1.0) -> set[str]:
    """Features keeping an exactly nonzero weight under L1 logistic."""
    X = _impute_median(ds.features)
    model = fit_logistic(X, ds.target, penalty="l1", c=c, max_iter=500, standardize=True)
    return {name for name, w in zip(ds.feature_names, model.scaled_weights) if w != 0.0}


def l1_ranking(ds: Dataset, c: float = 1.0) -> list[str]:
    """Nonzero-weight features ranked by |standardized L1 weight|."""
    X = _impute_median(ds.features)
    model = fit_logistic(X, ds.target, penalty="l1", c=c, max_iter=500, standardize=True)
    order = np.argsort(-np.abs(model.scaled_weights), kind="stable")
    return [ds.feature_names[i] for i in order if model.scaled_weights[i] != 0.0]


def tree_importance(
    ds: Dataset,
    model_kind: str = "random_forest",
    n_trees: int = 50,
    max_leaves: int = 15,
    min_samples_leaf: int = 10,
    feature_fraction: float = 0.5,
    seed: int = 0,
) -> dict[str, float]:
    """Total-gain importance normalized to sum 1.

    random_forest bags single trees on bootstrap rows with feature
    subsampling; gbdt fits a small boosted ensemble.
    """
    X = ds.features
    y = ds.target.astype(np.float64)
    p = X.shape[1]
    names = ds.feature_names
    if model_kind == "gbdt":
        cfg = boosting.GbdtConfig(
            n_trees=n_trees,
            max_leaves=max_leaves,
            min_samples_leaf=min_samples_leaf,
            seed=seed,
        )
        model = boosting.fit_xy(X, y, cfg)
        imp = boosting.gain_importance(model)
        return dict(zip(names, imp.tolist()))
    if model_kind != "random_forest":
        raise ValueError(f"unknown model kind {model_kind!r}")

    rng = np.random.default_rng(seed)
    n = X.shape[0]
    prior = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    base = np.log(prior / (1 - prior))
    prob = expit(np.full(n, base))
    grad = prob - y
    hess = prob * (1.0 - prob)
    n_feat = max(1, int(round(feature_fraction * p)))
    imp = np.zeros(p)
    built = 0
    for _ in range(n_trees):
        rows = np.sort(rng.choice(n, size=n, replace=True))
        feats = np.sort(rng.choice(p, size=n_feat, replace=False))
        tree = boosting.build_tree(
            X,
            grad,
            hess,
            rows,
            max_leaves=max_leaves,
            min_samples_leaf=min_samples_leaf,
            feature_subset=feats.tolist(),
        )
        if tree is None:
            continue
        built += 1
        internal = tree.feature >= 0
        np.add.at(imp, tree.feature[internal], tree.gain[internal])
    if built == 0:
        warnings.warn("no trees grew; importances are uniformly zero", stacklevel=2)
        return dict(zip(names, np.zeros(p).tolist()))
    total = imp.sum()
    if total > 0:
        imp = imp / total
    return dict(zip(names, imp.tolist()))


def _top_k(scores: dict[str, float], k: int) -> list[str]:
    return [name for name, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


def vote_select(rankings: dict[str, list[str]], n_final: int, k_per_method: int) -> SelectionReport:
    """Hard voting over per-method top-k lists.

    Features sort by (votes desc, mean rank over the methods that listed
    them asc, name asc); the first n_final are selected.
    """
    if len(rankings) < 2:
        raise ValueError("need at least 2 methods to vote")
    top = {m: r[:k_per_method] for m, r in rankings.items()}
    all_names = sorted({name for r in rankings.values() for name in r})
    votes = {name: sum(name in t for t in top.values()) for name in all_names}
    mean_rank = {}
    for name in all_names:
        ranks = [t.index(name) + 1 for t in top.values() if name in t]
        mean_rank[name] = float(np.mean(ranks)) if ranks else float("inf")
    if n_final > len(all_names):
        warnings.warn(
            f"requested {n_final} features but only {len(all_names)} exist; clipping", stacklevel=2
        )
        n_final = len(all_names)
    ordered = sorted(all_names, key=lambda name: (-votes[name], mean_rank[name], name))
    return SelectionReport(
        rankings={m: list(r) for m, r in top.items()},
        votes=votes,
        selected=ordered[:n_final],
        k_per_method=k_per_method,
    )


@dataclass(frozen=True)
class SelectionConfig:
    n_final: int = 15
    k_per_method: int = 0  # 0 means 2 * n_final
    n_bins: int = 10
    rfe_step: int = 1
    l1_c: float = 0.1
    tree_seed: int = 0

    def resolved_k(self) -> int:
        return self.k_per_method if self.k_per_method > 0 else 2 * self.n_final


def run_selection(ds: Dataset, cfg: SelectionConfig) -> SelectionReport:
    """All six methods on one dataset, then the vote."""
    k = cfg.resolved_k()
    rankings = {
        "pearson": _top_k(pearson_scores(ds), k),
        "chi2": _top_k(chi2_scores(ds, cfg.n_bins), k),
        "rfe": rfe(ds, n_keep=1, step=cfg.rfe_step)[:k],
        "l1_logistic": l1_ranking(ds, c=cfg.l1_c)[:k],
        "random_forest": _top_k(tree_importance(ds, "random_forest", seed=cfg.tree_seed), k),
        "gbdt": _top_k(tree_importance(ds, "gbdt", seed=cfg.tree_seed), k),
    }
    return vote_select(rankings, cfg.n_final, k)
