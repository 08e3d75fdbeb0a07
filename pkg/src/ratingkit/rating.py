"""Rating-scale construction by differential evolution.

A scale is a set of K-1 increasing cut points on (0, 1) that partitions
calibrated PDs into K contiguous buckets. The DE/rand/1/bin optimizer
searches cut placements against a fitness mixing classwise Brier score,
within-class cohesion, between-class separation, bucket-size bounds and a
penalty on non-monotone observed default rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_LABELS_9 = ["AAA", "AA", "A", "BBB", "BB", "B", "CCC", "CC", "C"]

_CUT_EPS = 1e-9
_CUT_GAP = 1e-6


class RatingOptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DeConfig:
    population: int = 50
    weight_f: float = 0.8
    crossover: float = 0.9
    generations: int = 300
    seed: int = 0
    w_brier: float = 1.0
    w_cohesion: float = 1.0
    w_separation: float = 1.0
    w_size: float = 10.0
    w_mono: float = 100.0
    min_share: float = 0.02
    max_share: float = 0.40

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if not 0.0 < self.weight_f < 2.0:
            raise ValueError("differential weight must lie in (0, 2)")
        if not 0.0 <= self.crossover <= 1.0:
            raise ValueError("crossover rate must lie in [0, 1]")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        for w in (self.w_brier, self.w_cohesion, self.w_separation, self.w_size, self.w_mono):
            if w < 0:
                raise ValueError("fitness weights must be non-negative")
        if not 0.0 <= self.min_share < self.max_share <= 1.0:
            raise ValueError("need 0 <= min_share < max_share <= 1")

    def to_dict(self) -> dict:
        return {
            "population": self.population,
            "weight_f": self.weight_f,
            "crossover": self.crossover,
            "generations": self.generations,
            "seed": self.seed,
            "w_brier": self.w_brier,
            "w_cohesion": self.w_cohesion,
            "w_separation": self.w_separation,
            "w_size": self.w_size,
            "w_mono": self.w_mono,
            "min_share": self.min_share,
            "max_share": self.max_share,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeConfig":
        return cls(**d)


@dataclass(frozen=True)
class RatingScale:
    cuts: np.ndarray  # K-1 strictly increasing values in (0, 1)
    class_pd: np.ndarray  # strictly increasing mean PD per bucket
    labels: list[str]
    class_share: np.ndarray

    def __post_init__(self):
        cuts = np.asarray(self.cuts, dtype=np.float64)
        cpd = np.asarray(self.class_pd, dtype=np.float64)
        share = np.asarray(self.class_share, dtype=np.float64)
        if cuts.size + 1 != cpd.size or cpd.size != len(self.labels) or share.size != cpd.size:
            raise ValueError("inconsistent scale arity")
        if cuts.size and not (np.diff(cuts) > 0).all():
            raise ValueError("cuts must be strictly increasing")
        if cuts.size and (cuts[0] <= 0.0 or cuts[-1] >= 1.0):
            raise ValueError("cuts must lie strictly inside (0, 1)")
        if not (np.diff(cpd) > 0).all():
            raise ValueError("class PDs must be strictly increasing")
        if abs(share.sum() - 1.0) > 1e-9:
            raise ValueError("class shares must sum to 1")
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "class_pd", cpd)
        object.__setattr__(self, "class_share", share)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def bin_bounds(self) -> list[tuple[float, float]]:
        edges = np.r_[0.0, self.cuts, 1.0]
        return [(float(edges[i]), float(edges[i + 1])) for i in range(self.n_classes)]

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "labels": self.labels,
            "cuts": self.cuts.tolist(),
            "class_pd": self.class_pd.tolist(),
            "class_share": self.class_share.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RatingScale":
        return cls(
            cuts=np.asarray(d["cuts"], dtype=np.float64),
            class_pd=np.asarray(d["class_pd"], dtype=np.float64),
            labels=list(d["labels"]),
            class_share=np.asarray(d["class_share"], dtype=np.float64),
        )

    def to_table_rows(self) -> list[dict]:
        rows = []
        for label, (lo, hi), cpd, share in zip(self.labels, self.bin_bounds(), self.class_pd, self.class_share):
            rows.append(
                {"label": label, "bin_low": lo, "bin_high": hi, "class_pd": float(cpd), "share": float(share)}
            )
        return rows


def repair_cuts(genome: np.ndarray, eps: float = _CUT_EPS, gap: float = _CUT_GAP) -> np.ndarray:
    """Clamp to (eps, 1-eps), sort ascending and enforce a minimum gap."""
    x = np.sort(np.clip(np.asarray(genome, dtype=np.float64), eps, 1.0 - eps))
    for j in range(1, x.size):
        if x[j] < x[j - 1] + gap:
            x[j] = x[j - 1] + gap
    hi = 1.0 - eps
    for j in range(x.size - 1, -1, -1):
        ceil = hi - (x.size - 1 - j) * gap
        if x[j] > ceil:
            x[j] = ceil
        else:
            break
    return x


def _interp_missing(values: np.ndarray) -> np.ndarray:
    """Fill NaN entries by linear interpolation over the class index."""
    out = values.copy()
    nan = np.isnan(out)
    if nan.any():
        idx = np.arange(out.size)
        out[nan] = np.interp(idx[nan], idx[~nan], out[~nan])
    return out


def bucketize(cuts: np.ndarray, pds: np.ndarray) -> np.ndarray:
    """Bucket index per PD; a PD equal to a cut joins the upper bucket."""
    return np.searchsorted(np.asarray(cuts), np.asarray(pds), side="right")


def fitness(cuts, pds, y, cfg: DeConfig) -> float:
    """Reference fitness: lower is better.

    Empty buckets contribute their full low-size penalty and get a class PD
    interpolated from their neighbors so the landscape stays connected.
    """
    cuts = np.asarray(cuts, dtype=np.float64)
    pds = np.asarray(pds, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    k = cuts.size + 1
    n = pds.size
    assign = bucketize(cuts, pds)

    counts = np.bincount(assign, minlength=k).astype(np.float64)
    sum_pd = np.bincount(assign, weights=pds, minlength=k)
    sum_y = np.bincount(assign, weights=y, minlength=k)
    share = counts / n

    with np.errstate(invalid="ignore"):
        class_pd = np.where(counts > 0, sum_pd / np.maximum(counts, 1.0), np.nan)
        rate = np.where(counts > 0, sum_y / np.maximum(counts, 1.0), np.nan)
    class_pd = _interp_missing(class_pd)
    rate = _interp_missing(rate)

    bs_class = float(np.mean((class_pd[assign] - y) ** 2))
    coh = 0.0
    for kk in range(k):
        members = pds[assign == kk]
        if members.size:
            coh += share[kk] * float(members.var())
    sep = float(np.mean(np.diff(class_pd))) if k > 1 else 0.0
    size_pen = float(
        np.sum(np.maximum(0.0, cfg.min_share - share) ** 2 + np.maximum(0.0, share - cfg.max_share) ** 2)
    )
    mono_pen = float(np.sum(np.maximum(0.0, rate[:-1] - rate[1:]) ** 2))
    return (
        cfg.w_brier * bs_class
        + cfg.w_cohesion * coh
        - cfg.w_separation * sep
        + cfg.w_size * size_pen
        + cfg.w_mono * mono_pen
    )


def make_fast_fitness(pds, y, cfg: DeConfig, n_classes: int):
    """Prefix-sum fitness over sorted PDs; equivalent to fitness() but O(K log n)
    per evaluation. Used by the optimizer loop."""
    pds = np.asarray(pds, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    order = np.argsort(pds, kind="stable")
    s = pds[order]
    ys = y[order]
    n = s.size
    p1 = np.r_[0.0, np.cumsum(s)]
    p2 = np.r_[0.0, np.cumsum(s * s)]
    y1 = np.r_[0.0, np.cumsum(ys)]
    k = n_classes

    def fast_fitness(cuts: np.ndarray) -> float:
        bounds = np.r_[0, np.searchsorted(s, cuts, side="left"), n]
        counts = np.diff(bounds).astype(np.float64)
        sum_pd = np.diff(p1[bounds])
        sum_pd2 = np.diff(p2[bounds])
        sum_y = np.diff(y1[bounds])
        share = counts / n
        nonempty = counts > 0
        with np.errstate(invalid="ignore"):
            class_pd = np.where(nonempty, sum_pd / np.maximum(counts, 1.0), np.nan)
            rate = np.where(nonempty, sum_y / np.maximum(counts, 1.0), np.nan)
        class_pd = _interp_missing(class_pd)
        rate = _interp_missing(rate)

        bs = float(np.sum(counts * class_pd**2 - 2.0 * class_pd * sum_y + sum_y) / n)
        var = np.zeros(k)
        var[nonempty] = np.maximum(
            sum_pd2[nonempty] / counts[nonempty] - (sum_pd[nonempty] / counts[nonempty]) ** 2, 0.0
        )
        coh = float(np.sum(share * var))
        sep = float(np.mean(np.diff(class_pd))) if k > 1 else 0.0
        size_pen = float(
            np.sum(np.maximum(0.0, cfg.min_share - share) ** 2 + np.maximum(0.0, share - cfg.max_share) ** 2)
        )
        mono_pen = float(np.sum(np.maximum(0.0, rate[:-1] - rate[1:]) ** 2))
        return (
            cfg.w_brier * bs
            + cfg.w_cohesion * coh
            - cfg.w_separation * sep
            + cfg.w_size * size_pen
            + cfg.w_mono * mono_pen
        )

    return fast_fitness


def de_minimize(objective, dim: int, cfg: DeConfig) -> tuple[np.ndarray, float]:
    """DE/rand/1/bin over repaired genomes in (0, 1)^dim.

    Greedy per-candidate selection: an incumbent is only replaced by a trial
    with fitness no worse than its own.
    """
    rng = np.random.default_rng(cfg.seed)
    np_size = cfg.population
    pop = np.array([repair_cuts(rng.random(dim)) for _ in range(np_size)])
    fit = np.array([objective(pop[i]) for i in range(np_size)])
    for _ in range(cfg.generations):
        for i in range(np_size):
            choices = rng.choice(np_size - 1, size=3, replace=False)
            a, b, c = ((j if j < i else j + 1) for j in choices)
            mutant = pop[a] + cfg.weight_f * (pop[b] - pop[c])
            cross = rng.random(dim) < cfg.crossover
            cross[rng.integers(dim)] = True
            trial = repair_cuts(np.where(cross, mutant, pop[i]))
            f_trial = objective(trial)
            if f_trial <= fit[i]:
                pop[i] = trial
                fit[i] = f_trial
    best = int(np.argmin(fit))
    return pop[best].copy(), float(fit[best])


def de_optimize(pds, y, cfg: DeConfig, n_classes: int = 9, labels=None) -> RatingScale:
    """Search cut points for the rating scale and build the final scale.

    Fails with diagnostics when the best cut layout leaves a bucket empty or
    the resulting class PDs are not strictly increasing.
    """
    pds = np.asarray(pds, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pds.size == 0:
        raise ValueError("pds must be nonempty")
    if np.unique(pds).size < n_classes:
        raise RatingOptimizationError(
            f"only {np.unique(pds).size} distinct PD values; "
            f"monotone class PDs are unattainable with {n_classes} classes, use fewer"
        )
    if labels is None:
        labels = DEFAULT_LABELS_9 if n_classes == 9 else [f"RC{i + 1}" for i in range(n_classes)]
    if len(labels) != n_classes:
        raise ValueError("labels length must equal the class count")

    objective = make_fast_fitness(pds, y, cfg, n_classes)
    cuts, best_fit = de_minimize(objective, n_classes - 1, cfg)

    assign = bucketize(cuts, pds)
    counts = np.bincount(assign, minlength=n_classes).astype(np.float64)
    if (counts == 0).any():
        empties = np.flatnonzero(counts == 0).tolist()
        raise RatingOptimizationError(
            f"optimization left empty buckets {empties} (cuts={cuts.tolist()}, fitness={best_fit}); "
            "relax size bounds or use fewer classes"
        )
    class_pd = np.bincount(assign, weights=pds, minlength=n_classes) / counts
    if not (np.diff(class_pd) > 0).all():
        raise RatingOptimizationError(
            f"class PDs are not strictly increasing: {class_pd.tolist()}; use fewer classes"
        )
    return RatingScale(cuts=cuts, class_pd=class_pd, labels=list(labels), class_share=counts / pds.size)


def assign_rating(scale: RatingScale, pd_value: float) -> str:
    """Label of the bucket containing pd; a boundary PD joins the upper bucket."""
    if not 0.0 <= pd_value <= 1.0:
        raise ValueError("pd must lie in [0, 1]")
    return scale.labels[int(bucketize(scale.cuts, np.asarray([pd_value]))[0])]


def assign_ratings(scale: RatingScale, pds) -> np.ndarray:
    """Bucket index per PD (vectorized form of assign_rating)."""
    return bucketize(scale.cuts, np.asarray(pds, dtype=np.float64))
