"""Gradient-boosted trees for unbalanced binary default classification.

Trees are grown leaf-wise (best gain first) with exact sorted-feature split
search. The loss is class-weighted log-loss: positives carry a
scale_pos_weight multiplier. Missing values are routed to whichever side of
a split maximizes gain during training and the direction is stored.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .dataset import Dataset
from .metrics import confusion, specificity as spec_rate, tpr as recall_rate


class BoostingFitError(ValueError):
    pass


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = 100
    max_leaves: int = 15
    min_samples_leaf: int = 20
    learning_rate: float = 0.1
    subsample_fraction: float = 1.0
    scale_pos_weight: float = 1.0
    min_gain: float = 0.0
    leaf_l2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_leaves < 2 or self.min_samples_leaf < 1:
            raise ValueError("n_trees must be >= 0, max_leaves >= 2, min_samples_leaf >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must lie in (0, 1]")
        if self.learning_rate <= 0 or self.scale_pos_weight <= 0:
            raise ValueError("learning_rate and scale_pos_weight must be positive")
        if self.min_gain < 0 or self.leaf_l2 < 0:
            raise ValueError("min_gain and leaf_l2 must be non-negative")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_leaves": self.max_leaves,
            "min_samples_leaf": self.min_samples_leaf,
            "learning_rate": self.learning_rate,
            "subsample_fraction": self.subsample_fraction,
            "scale_pos_weight": self.scale_pos_weight,
            "min_gain": self.min_gain,
            "leaf_l2": self.leaf_l2,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtConfig":
        return cls(**d)


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    miss_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    leaf_id: np.ndarray
    n_leaves: int

    def route(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int32)
        while True:
            feat = self.feature[node]
            active = np.flatnonzero(feat >= 0)
            if active.size == 0:
                return node
            cur = node[active]
            x = X[active, feat[active]]
            go_left = np.where(np.isnan(x), self.miss_left[cur], x <= self.threshold[cur])
            node[active] = np.where(go_left, self.left[cur], self.right[cur])

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.route(X)]

    def leaf_ids(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_id[self.route(X)]

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.feature.size):
            if self.feature[i] < 0:
                nodes.append({"leaf_id": int(self.leaf_id[i]), "value": float(self.value[i])})
            else:
                nodes.append(
                    {
                        "feature": int(self.feature[i]),
                        "threshold": float(self.threshold[i]),
                        "missing_left": bool(self.miss_left[i]),
                        "left": int(self.left[i]),
                        "right": int(self.right[i]),
                        "gain": float(self.gain[i]),
                    }
                )
        return {"nodes": nodes, "n_leaves": self.n_leaves}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        nodes = d["nodes"]
        k = len(nodes)
        feature = np.full(k, -1, dtype=np.int32)
        threshold = np.zeros(k)
        miss_left = np.zeros(k, dtype=bool)
        left = np.zeros(k, dtype=np.int32)
        right = np.zeros(k, dtype=np.int32)
        value = np.zeros(k)
        gain = np.zeros(k)
        leaf_id = np.full(k, -1, dtype=np.int32)
        for i, nd in enumerate(nodes):
            if "feature" in nd:
                feature[i] = nd["feature"]
                threshold[i] = nd["threshold"]
                miss_left[i] = nd["missing_left"]
                left[i] = nd["left"]
                right[i] = nd["right"]
                gain[i] = nd["gain"]
            else:
                value[i] = nd["value"]
                leaf_id[i] = nd["leaf_id"]
        return cls(feature, threshold, miss_left, left, right, value, gain, leaf_id, int(d["n_leaves"]))


@dataclass(frozen=True)
class GbdtModel:
    base_score: float
    learning_rate: float
    trees: list[Tree]
    config: GbdtConfig
    n_features: int

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "config": self.config.to_dict(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        return cls(
            base_score=float(d["base_score"]),
            learning_rate=float(d["learning_rate"]),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            config=GbdtConfig.from_dict(d["config"]),
            n_features=int(d["n_features"]),
        )


class _LeafState:
    """Working state of a growable leaf.

    Matrices are feature-major (subset features, leaf rows); every row is
    sorted by its own feature value with missing entries last. `rows` holds
    the original row ids in the same order.
    """

    __slots__ = ("node_id", "vals", "gs", "hs", "rows", "kj", "g_sum", "h_sum", "split")

    def __init__(self, node_id, vals, gs, hs, rows, kj, g_sum, h_sum):
        self.node_id = node_id
        self.vals = vals
        self.gs = gs
        self.hs = hs
        self.rows = rows
        self.kj = kj  # non-missing count per feature
        self.g_sum = g_sum
        self.h_sum = h_sum
        self.split = None  # (gain, local feature, threshold, miss_left, pos)


def _best_split(state: _LeafState, lam, msl):
    """Vectorized best split over all features and positions at once.

    Gains form a (features, positions) matrix; its flat argmax resolves ties
    to the lowest feature, then the lowest threshold position, with
    missing-goes-left preferred over missing-goes-right.
    """
    vals, gs, hs, kj = state.vals, state.gs, state.hs, state.kj
    q, k = vals.shape
    if k < 2:
        return None
    cg = np.cumsum(gs, axis=1)
    ch = np.cumsum(hs, axis=1)
    rows_q = np.arange(q)
    g_all = cg[:, -1]
    h_all = ch[:, -1]
    nm_last = np.maximum(kj - 1, 0)
    g_nm = np.where(kj > 0, cg[rows_q, nm_last], 0.0)
    h_nm = np.where(kj > 0, ch[rows_q, nm_last], 0.0)
    g_miss = (g_all - g_nm)[:, None]
    h_miss = (h_all - h_nm)[:, None]
    n_miss = (k - kj)[:, None]
    parent = (g_all * g_all / (h_all + lam))[:, None]

    valid = vals[:, :-1] < vals[:, 1:]  # NaN comparisons are False, masking the missing block
    gl = cg[:, :-1]
    hl = ch[:, :-1]
    gr = g_nm[:, None] - gl
    hr = h_nm[:, None] - hl
    n_left = np.arange(1, k)[None, :]
    n_right = kj[:, None] - n_left

    def case_gain(gL, hL, gR, hR, ok):
        num = np.multiply(gL, gL)
        den = hL + lam
        np.divide(num, den, out=num)
        np.multiply(gR, gR, out=den)
        den /= hR + lam
        num += den
        num -= parent
        return np.where(ok, num, -np.inf)

    ok_a = valid & (n_left + n_miss >= msl) & (n_right >= msl)
    gain_a = case_gain(gl + g_miss, hl + h_miss, gr, hr, ok_a)
    flat_a = int(np.argmax(gain_a))
    best_gain = gain_a.flat[flat_a]
    c_loc, pos = divmod(flat_a, k - 1)
    miss_left = True

    if (n_miss > 0).any():
        ok_b = valid & (n_left >= msl) & (n_right + n_miss >= msl) & (n_miss > 0)
        gain_b = case_gain(gl, hl, gr + g_miss, hr + h_miss, ok_b)
        flat_b = int(np.argmax(gain_b))
        if gain_b.flat[flat_b] > best_gain:
            best_gain = gain_b.flat[flat_b]
            c_loc, pos = divmod(flat_b, k - 1)
            miss_left = False

    if not np.isfinite(best_gain):
        return None
    lo, hi = vals[c_loc, pos], vals[c_loc, pos + 1]
    thr = lo + 0.5 * (hi - lo)
    if not (lo <= thr < hi):
        thr = lo
    return (0.5 * float(best_gain), int(c_loc), float(thr), miss_left, int(pos))


def _partition(mat, idx_l, idx_r, n_l, n_r):
    """Split each feature row into left/right by flat element indices,
    preserving order. The index pair is shared by all four leaf matrices."""
    q = mat.shape[0]
    flat = mat.ravel()
    return flat[idx_l].reshape(q, n_l), flat[idx_r].reshape(q, n_r)


def _sorted_state(X, g, h, row_mat):
    """Leaf matrices from presorted row ids (feature-major)."""
    vals = np.take_along_axis(X.T, row_mat, axis=1)
    gs = g[row_mat]
    hs = h[row_mat]
    kj = (~np.isnan(vals)).sum(axis=1)
    return _LeafState(0, vals, gs, hs, row_mat, kj, float(gs[0].sum()), float(hs[0].sum()))


def presort_rows(X: np.ndarray) -> np.ndarray:
    """Row ids of every feature column in ascending value order, missing
    last; shape (features, rows). Reused across boosting iterations."""
    return np.argsort(X.T, axis=1, kind="stable").astype(np.int64)


def filter_presorted(pre_order: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Restrict a presorted row-id matrix to rows flagged in `keep`."""
    take = keep[pre_order]
    k = int(take[0].sum())
    return pre_order[take].reshape(pre_order.shape[0], k)


def build_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    rows: np.ndarray,
    max_leaves: int,
    min_samples_leaf: int,
    leaf_l2: float = 1.0,
    min_gain: float = 0.0,
    feature_subset=None,
    presorted_rows: np.ndarray = None,
):
    """Grow one regression tree on (g, h) over the given rows.

    Returns None when no root split clears min_gain. `presorted_rows`
    short-circuits the per-feature sort when the caller already holds the
    sorted row-id matrix. Exposed separately so bagged-forest feature
    importance can reuse the learner with a feature subset.
    """
    n_total = X.shape[0]
    p = X.shape[1]
    cols = np.arange(p) if feature_subset is None else np.asarray(sorted(feature_subset), dtype=np.int64)

    if presorted_rows is not None:
        row_mat = presorted_rows
        if row_mat.shape[1] < 2:
            return None
        root = _sorted_state(X, g, h, row_mat)
    else:
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size < 2:
            return None
        xs = X.T[np.ix_(cols, rows)]
        order = np.argsort(xs, axis=1, kind="stable")
        vals = np.take_along_axis(xs, order, axis=1)
        row_mat = rows[order]
        gs = g[row_mat]
        hs = h[row_mat]
        kj = (~np.isnan(vals)).sum(axis=1)
        root = _LeafState(0, vals, gs, hs, row_mat, kj, float(gs[0].sum()), float(hs[0].sum()))

    lam = leaf_l2
    root.split = _best_split(root, lam, min_samples_leaf)
    if root.split is None or root.split[0] <= min_gain:
        return None

    feature = [-1]
    threshold = [0.0]
    miss_left = [False]
    left = [-1]
    right = [-1]
    gain_arr = [0.0]
    value = [0.0]

    heap = []
    counter = 0
    heapq.heappush(heap, (-root.split[0], counter, root))
    n_leaves = 1
    side = np.zeros(n_total, dtype=bool)

    while heap and n_leaves < max_leaves:
        _, _, leaf = heapq.heappop(heap)
        sgain, c_loc, thr, ml, pos = leaf.split
        k = leaf.rows.shape[1]

        left_rows_nm = leaf.rows[c_loc, : pos + 1]
        miss_rows = leaf.rows[c_loc, leaf.kj[c_loc] :]
        side[left_rows_nm] = True
        if ml and miss_rows.size:
            side[miss_rows] = True

        mask = side[leaf.rows]
        n_l = pos + 1 + (miss_rows.size if ml else 0)
        n_r = k - n_l
        vals_l, vals_r = _partition(leaf.vals, mask, n_l, n_r)
        gs_l, gs_r = _partition(leaf.gs, mask, n_l, n_r)
        hs_l, hs_r = _partition(leaf.hs, mask, n_l, n_r)
        rows_l, rows_r = _partition(leaf.rows, mask, n_l, n_r)

        side[left_rows_nm] = False
        if ml and miss_rows.size:
            side[miss_rows] = False

        kj_l = (~np.isnan(vals_l)).sum(axis=1)
        gl = float(gs_l[0].sum())
        hl = float(hs_l[0].sum())

        left_child = _LeafState(len(feature), vals_l, gs_l, hs_l, rows_l, kj_l, gl, hl)
        right_child = _LeafState(
            len(feature) + 1, vals_r, gs_r, hs_r, rows_r, leaf.kj - kj_l, leaf.g_sum - gl, leaf.h_sum - hl
        )

        nid = leaf.node_id
        feature[nid] = int(cols[c_loc])
        threshold[nid] = thr
        miss_left[nid] = ml
        left[nid] = left_child.node_id
        right[nid] = right_child.node_id
        gain_arr[nid] = sgain
        value[nid] = 0.0

        for child in (left_child, right_child):
            feature.append(-1)
            threshold.append(0.0)
            miss_left.append(False)
            left.append(-1)
            right.append(-1)
            gain_arr.append(0.0)
            value.append(-child.g_sum / (child.h_sum + lam))
        n_leaves += 1

        for child in (left_child, right_child):
            child.split = _best_split(child, lam, min_samples_leaf)
            if child.split is not None and child.split[0] > min_gain:
                counter += 1
                heapq.heappush(heap, (-child.split[0], counter, child))

    feature = np.asarray(feature, dtype=np.int32)
    leaf_id = np.full(feature.size, -1, dtype=np.int32)
    leaf_nodes = np.flatnonzero(feature < 0)
    leaf_id[leaf_nodes] = np.arange(leaf_nodes.size, dtype=np.int32)
    return Tree(
        feature=feature,
        threshold=np.asarray(threshold),
        miss_left=np.asarray(miss_left, dtype=bool),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value),
        gain=np.asarray(gain_arr),
        leaf_id=leaf_id,
        n_leaves=int(leaf_nodes.size),
    )


def _as_xy(ds) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(ds, Dataset):
        return ds.features, ds.target.astype(np.float64)
    raise TypeError("expected a Dataset; use fit_xy for raw arrays")


def fit(ds_train: Dataset, config: GbdtConfig) -> GbdtModel:
    X, y = _as_xy(ds_train)
    return fit_xy(X, y, config)


def fit_xy(X, y, config: GbdtConfig) -> GbdtModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    n_pos = int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise BoostingFitError("both classes must be present")

    spw = config.scale_pos_weight
    base = float(np.log(spw * n_pos / n_neg))
    w = np.where(y == 1.0, spw, 1.0)

    rng = np.random.default_rng(config.seed)
    score = np.full(n, base)
    trees: list[Tree] = []
    k_sub = int(np.ceil(config.subsample_fraction * n))
    pre_order = presort_rows(X)
    keep = np.zeros(n, dtype=bool)
    for _ in range(config.n_trees):
        prob = expit(score)
        grad = w * (prob - y)
        hess = w * prob * (1.0 - prob)
        if k_sub >= n:
            row_mat = pre_order
        else:
            rows = rng.choice(n, size=k_sub, replace=False)
            keep[:] = False
            keep[rows] = True
            row_mat = filter_presorted(pre_order, keep)
        tree = build_tree(
            X,
            grad,
            hess,
            None,
            max_leaves=config.max_leaves,
            min_samples_leaf=config.min_samples_leaf,
            leaf_l2=config.leaf_l2,
            min_gain=config.min_gain,
            presorted_rows=row_mat,
        )
        if tree is None:
            continue
        trees.append(tree)
        score += config.learning_rate * tree.leaf_values(X)
    if config.n_trees > 0 and not trees:
        warnings.warn("all trees skipped; model reduces to the base score", stacklevel=2)
    return GbdtModel(
        base_score=base,
        learning_rate=config.learning_rate,
        trees=trees,
        config=config,
        n_features=X.shape[1],
    )


def _check_width(model: GbdtModel, X: np.ndarray):
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} feature columns, got {X.shape}")


def predict_score(model: GbdtModel, rows) -> np.ndarray:
    """Raw log-odds: base score plus learning-rate-scaled leaf values."""
    X = rows.features if isinstance(rows, Dataset) else np.asarray(rows, dtype=np.float64)
    _check_width(model, X)
    score = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        score += model.learning_rate * tree.leaf_values(X)
    return score


def predict_proba(model: GbdtModel, rows) -> np.ndarray:
    return expit(predict_score(model, rows))


def leaf_indices(model: GbdtModel, rows) -> np.ndarray:
    """Per-row vector of per-tree leaf ids, shape (n, n_trees)."""
    X = rows.features if isinstance(rows, Dataset) else np.asarray(rows, dtype=np.float64)
    _check_width(model, X)
    out = np.empty((X.shape[0], len(model.trees)), dtype=np.int32)
    for t, tree in enumerate(model.trees):
        out[:, t] = tree.leaf_ids(X)
    return out


def gain_importance(model: GbdtModel) -> np.ndarray:
    """Total split gain per feature, normalized to sum 1 (zeros if no splits)."""
    imp = np.zeros(model.n_features)
    for tree in model.trees:
        internal = tree.feature >= 0
        np.add.at(imp, tree.feature[internal], tree.gain[internal])
    total = imp.sum()
    return imp / total if total > 0 else imp


def f_beta(specificity: float, recall: float, beta: float) -> float:
    """(1 + beta^2) * specificity * recall / (beta^2 * specificity + recall);
    0 when the denominator vanishes."""
    if beta <= 0 or not np.isfinite(beta):
        raise ValueError("beta must be finite and positive")
    if not (0.0 <= specificity <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError("specificity and recall must lie in [0, 1]")
    denom = beta * beta * specificity + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta * beta) * specificity * recall / denom


@dataclass(frozen=True)
class CvFoldResult:
    candidate: int
    test_year: int
    f_beta: float
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass(frozen=True)
class CvReport:
    folds: list[CvFoldResult]
    mean_scores: dict[int, float]
    discarded: dict[int, str] = field(default_factory=dict)


def oot_cv_tune(
    ds: Dataset, grid: list[GbdtConfig], beta: float, threshold: float = 0.5
) -> tuple[GbdtConfig, CvReport]:
    """Expanding-window tuning: every year after the first serves once as the
    test year with all earlier years as training. Candidates are scored by the
    mean F-beta of the fold confusion matrices at the fixed threshold."""
    if not grid:
        raise ValueError("empty candidate grid")
    years = np.unique(ds.year)
    if years.size < 2:
        raise ValueError("need at least 2 distinct years for out-of-time folds")

    folds = []
    for test_year in years[1:]:
        tr = np.flatnonzero(ds.year < test_year)
        te = np.flatnonzero(ds.year == test_year)
        folds.append((int(test_year), ds.take(tr), ds.take(te)))

    results: list[CvFoldResult] = []
    mean_scores: dict[int, float] = {}
    discarded: dict[int, str] = {}
    for ci, cand in enumerate(grid):
        scores = []
        try:
            for test_year, tr, te in folds:
                model = fit(tr, cand)
                pd_col = predict_proba(model, te)
                cm = confusion(pd_col, te.target, threshold)
                fb = f_beta(spec_rate(cm), recall_rate(cm), beta)
                scores.append(fb)
                results.append(
                    CvFoldResult(candidate=ci, test_year=test_year, f_beta=fb, tp=cm.tp, fp=cm.fp, tn=cm.tn, fn=cm.fn)
                )
        except (BoostingFitError, ValueError) as exc:
            discarded[ci] = f"failed on fold year {test_year}: {exc}"
            continue
        mean_scores[ci] = float(np.mean(scores))

    if not mean_scores:
        raise BoostingFitError("every grid candidate failed during out-of-time tuning")

    def sort_key(ci: int):
        cand = grid[ci]
        return (-mean_scores[ci], cand.n_trees, cand.max_leaves, ci)

    best = min(mean_scores, key=sort_key)
    return grid[best], CvReport(folds=results, mean_scores=mean_scores, discarded=discarded)
