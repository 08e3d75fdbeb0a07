"""Categorical encoders and embedding-vector ingestion.

The target encoder shrinks each category mean toward the global mean with a
weight that grows with category size, and is split into fit/transform so a
held-out fold can never leak its targets into the encoding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class EncoderFitError(ValueError):
    """Raised when an encoder cannot be fitted."""


class EmbeddingIngestionError(ValueError):
    """Raised for malformed embedding files."""


def label_encode(column) -> tuple[np.ndarray, dict]:
    """Map categories to integer codes in first-appearance order."""
    codes = {}
    out = np.empty(len(column), dtype=np.int64)
    for i, value in enumerate(column):
        out[i] = codes.setdefault(value, len(codes))
    return out, codes


def one_hot_encode(column, vocabulary: list) -> np.ndarray:
    """0/1 indicator matrix over a fixed vocabulary; unseen values give an
    all-zero row."""
    index = {v: j for j, v in enumerate(vocabulary)}
    out = np.zeros((len(column), len(vocabulary)), dtype=np.float64)
    for i, value in enumerate(column):
        j = index.get(value)
        if j is not None:
            out[i, j] = 1.0
    return out


@dataclass(frozen=True)
class JamesSteinEncoder:
    """Shrinkage target encoder fitted on one fold.

    encoded_k = w_k * m_k + (1 - w_k) * global_mean with
    w_k = n_k * tau2 / (n_k * tau2 + s2), where s2 is the target variance and
    tau2 the variance of per-category means over categories with n_k >= 2.
    """

    global_mean: float
    encoding: dict  # category -> encoded value
    counts: dict  # category -> n_k
    weights: dict  # category -> w_k
    fitted_on: int


def fit_james_stein(column, target) -> JamesSteinEncoder:
    column = np.asarray(column)
    y = np.asarray(target, dtype=np.float64)
    if column.shape != y.shape:
        raise EncoderFitError("column and target lengths differ")
    if y.size == 0 or np.all(y == y[0]):
        raise EncoderFitError("target is constant; shrinkage weights are undefined")

    global_mean = float(y.mean())
    s2 = float(y.var())
    cats, inverse = np.unique(column, return_inverse=True)
    n_k = np.bincount(inverse, minlength=len(cats)).astype(np.float64)
    m_k = np.bincount(inverse, weights=y, minlength=len(cats)) / n_k

    eligible = m_k[n_k >= 2]
    tau2 = float(eligible.var()) if eligible.size >= 2 else 0.0
    w_k = (n_k * tau2) / (n_k * tau2 + s2)
    encoded = w_k * m_k + (1.0 - w_k) * global_mean

    keys = [c.item() if hasattr(c, "item") else c for c in cats]
    return JamesSteinEncoder(
        global_mean=global_mean,
        encoding=dict(zip(keys, encoded.tolist())),
        counts=dict(zip(keys, n_k.astype(int).tolist())),
        weights=dict(zip(keys, w_k.tolist())),
        fitted_on=int(y.size),
    )


def transform_james_stein(enc: JamesSteinEncoder, column) -> np.ndarray:
    """Seen categories map to their encoded value, unseen to the global mean."""
    out = np.empty(len(column), dtype=np.float64)
    for i, value in enumerate(column):
        key = value.item() if hasattr(value, "item") else value
        out[i] = enc.encoding.get(key, enc.global_mean)
    return out


@dataclass(frozen=True)
class EmbeddingTable:
    keys: list[str]
    vectors: np.ndarray  # (n_keys, dim)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, key: str):
        try:
            return self.vectors[self.keys.index(key)]
        except ValueError:
            return None


def load_embeddings(path) -> EmbeddingTable:
    """Read a text file of `key v1 v2 ... vd` records with one shared dimension.

    Duplicate keys: last record wins with a warning.
    """
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            key, values = parts[0], parts[1:]
            if not values:
                raise EmbeddingIngestionError(f"{path}:{lineno}: record has no vector components")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise EmbeddingIngestionError(
                    f"{path}:{lineno}: dimension {len(values)} differs from established {dim}"
                )
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise EmbeddingIngestionError(f"{path}:{lineno}: non-numeric vector component") from None
            if key in table:
                warnings.warn(f"duplicate embedding key {key!r} at line {lineno}; keeping the last", stacklevel=2)
            table[key] = vec
    if not table:
        raise EmbeddingIngestionError(f"{path}: no records")
    keys = list(table)
    return EmbeddingTable(keys=keys, vectors=np.vstack([table[k] for k in keys]))
