"""Corporate default classification, PD calibration, rating bucketing,
back-testing and local explainability."""

from . import (
    autoencoder,
    backtesting,
    boosting,
    calibration,
    dataset,
    encoders,
    explain,
    logistic,
    metrics,
    pipeline,
    rating,
    selection,
    synthetic,
)

__version__ = "0.1.0"

__all__ = [
    "autoencoder",
    "backtesting",
    "boosting",
    "calibration",
    "dataset",
    "encoders",
    "explain",
    "logistic",
    "metrics",
    "pipeline",
    "rating",
    "selection",
    "synthetic",
    "__version__",
]
