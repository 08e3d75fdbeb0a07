"""Statistical back-testing of a rating scale.

Per rating class the realized default count is checked against the forecast
class PD with a one-sided binomial test, and the realized default rate is
graded into Green/Yellow/Orange/Red zones by its distance from the forecast
in units of the binomial standard deviation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from . import calibration, metrics, rating


@dataclass(frozen=True)
class TrafficLightParams:
    k_yellow: float = 0.84
    k_orange: float = 1.44

    def __post_init__(self):
        if not 0.0 < self.k_yellow < self.k_orange:
            raise ValueError("need 0 < k_yellow < k_orange")


ZONES = ("Green", "Yellow", "Orange", "Red")


def binomial_critical(n_k: int, pd_k: float, alpha: float) -> int:
    """Smallest default count d whose upper binomial tail P(X >= d) is at most
    1 - alpha; n_k + 1 when no d qualifies.

    Tail terms are built from log binomial coefficients so large n_k cannot
    overflow; the summation itself has only non-negative terms.
    """
    if n_k < 1:
        raise ValueError("n_k must be >= 1")
    if not 0.0 < pd_k < 1.0:
        raise ValueError("pd_k must lie strictly inside (0, 1)")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly inside (0, 1)")
    j = np.arange(n_k + 1)
    log_pmf = (
        gammaln(n_k + 1)
        - gammaln(j + 1)
        - gammaln(n_k - j + 1)
        + j * np.log(pd_k)
        + (n_k - j) * np.log1p(-pd_k)
    )
    pmf = np.exp(log_pmf)
    tail = np.cumsum(pmf[::-1])[::-1]  # tail[d] = P(X >= d)
    ok = np.flatnonzero(tail <= 1.0 - alpha)
    return int(ok[0]) if ok.size else n_k + 1


def binomial_test(n_k: int, pd_k: float, d: int, alpha: float) -> bool:
    """True when the forecast survives: observed defaults stay below the
    critical value."""
    if not 0 <= d <= n_k:
        raise ValueError("d must lie in [0, n_k]")
    return d < binomial_critical(n_k, pd_k, alpha)


def traffic_light(pd_k: float, n_k: int, p_k: float, params: TrafficLightParams = TrafficLightParams()) -> str:
    """Zone of the realized rate p_k against the forecast pd_k."""
    if n_k < 1:
        raise ValueError("n_k must be >= 1")
    if not 0.0 < pd_k < 1.0:
        raise ValueError("pd_k must lie strictly inside (0, 1)")
    sigma = np.sqrt(pd_k * (1.0 - pd_k) / n_k)
    if p_k < pd_k:
        return "Green"
    if p_k < pd_k + params.k_yellow * sigma:
        return "Yellow"
    if p_k < pd_k + params.k_orange * sigma:
        return "Orange"
    return "Red"


@dataclass(frozen=True)
class ClassValidation:
    label: str
    n_k: int
    pd_k: Optional[float]
    d: int
    p_k: Optional[float]
    alpha: float
    d_alpha: Optional[int]
    binomial_pass: Optional[bool]
    zone: Optional[str]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n": self.n_k,
            "class_pd": self.pd_k,
            "defaults": self.d,
            "observed_rate": self.p_k,
            "alpha": self.alpha,
            "critical_value": self.d_alpha,
            "binomial_test": None if self.binomial_pass is None else ("Passed" if self.binomial_pass else "Failed"),
            "traffic_light": self.zone,
        }


@dataclass(frozen=True)
class ValidationReport:
    classes: list[ClassValidation]
    auroc: float
    brier: float
    reliability: calibration.ReliabilityCurve

    def to_dict(self) -> dict:
        return {
            "classes": [c.to_dict() for c in self.classes],
            "auroc": self.auroc,
            "brier": self.brier,
            "reliability": self.reliability.to_rows(),
        }


def validate_scale(
    scale: rating.RatingScale,
    pds,
    y,
    alpha: float = 0.95,
    params: TrafficLightParams = TrafficLightParams(),
    n_reliability_bins: int = 10,
) -> ValidationReport:
    """Class-by-class back-test of calibrated PDs against outcomes.

    Classes with no observations are reported with missing statistics rather
    than dropped, so the report always has one row per rating class.
    """
    pds = np.asarray(pds, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    assign = rating.assign_ratings(scale, pds)
    rows: list[ClassValidation] = []
    for k, label in enumerate(scale.labels):
        members = assign == k
        n_k = int(members.sum())
        d = int(y[members].sum())
        pd_k = float(scale.class_pd[k])
        if n_k == 0:
            rows.append(
                ClassValidation(
                    label=label, n_k=0, pd_k=pd_k, d=0, p_k=None, alpha=alpha,
                    d_alpha=None, binomial_pass=None, zone=None,
                )
            )
            continue
        p_k = d / n_k
        d_alpha = binomial_critical(n_k, pd_k, alpha)
        rows.append(
            ClassValidation(
                label=label,
                n_k=n_k,
                pd_k=pd_k,
                d=d,
                p_k=p_k,
                alpha=alpha,
                d_alpha=d_alpha,
                binomial_pass=d < d_alpha,
                zone=traffic_light(pd_k, n_k, p_k, params),
            )
        )
    _, auc = metrics.roc_auc(pds, y)
    return ValidationReport(
        classes=rows,
        auroc=auc,
        brier=metrics.brier(pds, y),
        reliability=calibration.reliability_curve(pds, y, n_reliability_bins),
    )
