"""Tabular dataset container, CSV ingestion, financial KPIs and splits.

The feature matrix is float64 with NaN as the missing marker. Categorical
columns hold non-negative integer codes (as floats) with a side dictionary
of original labels, encoded in first-appearance order.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

KINDS = ("numeric", "categorical", "embedding")


class IngestionError(ValueError):
    """Raised for malformed CSV input."""


class SplitError(ValueError):
    """Raised when a requested split is degenerate."""


@dataclass(frozen=True)
class Dataset:
    """Immutable row-major table of features, binary target and statement year."""

    features: np.ndarray
    feature_names: list[str]
    feature_kinds: list[str]
    target: np.ndarray
    year: np.ndarray
    categories: dict[str, list[str]] = field(default_factory=dict)
    row_ids: np.ndarray = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        tgt = np.asarray(self.target, dtype=np.int64)
        yr = np.asarray(self.year, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        n = feats.shape[0]
        if tgt.shape != (n,) or yr.shape != (n,):
            raise ValueError("target/year length must match the row count")
        if tgt.size and not np.isin(tgt, (0, 1)).all():
            raise ValueError("target must contain only 0 and 1")
        if len(self.feature_names) != feats.shape[1] or len(self.feature_kinds) != feats.shape[1]:
            raise ValueError("feature_names/feature_kinds must match the column count")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("feature_names must be unique")
        for kind in self.feature_kinds:
            if kind not in KINDS:
                raise ValueError(f"unknown feature kind {kind!r}")
        for name, kind in zip(self.feature_names, self.feature_kinds):
            if kind == "categorical":
                col = feats[:, self.feature_names.index(name)]
                codes = col[~np.isnan(col)]
                if codes.size and ((codes < 0).any() or (codes != np.round(codes)).any()):
                    raise ValueError(f"categorical column {name!r} must hold non-negative integer codes")
        rid = self.row_ids if self.row_ids is not None else np.arange(n, dtype=np.int64)
        rid = np.asarray(rid, dtype=np.int64)
        if rid.shape != (n,):
            raise ValueError("row_ids length must match the row count")
        for arr in (feats, tgt, yr, rid):
            arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "target", tgt)
        object.__setattr__(self, "year", yr)
        object.__setattr__(self, "row_ids", rid)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_cols(self) -> int:
        return self.features.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.feature_names.index(name)]

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            feature_names=list(self.feature_names),
            feature_kinds=list(self.feature_kinds),
            target=self.target[idx],
            year=self.year[idx],
            categories=dict(self.categories),
            row_ids=self.row_ids[idx],
        )

    def replace_column(self, name: str, values, kind: str) -> "Dataset":
        j = self.feature_names.index(name)
        feats = self.features.copy()
        feats[:, j] = np.asarray(values, dtype=np.float64)
        kinds = list(self.feature_kinds)
        kinds[j] = kind
        cats = {k: v for k, v in self.categories.items() if k != name or kind == "categorical"}
        return Dataset(feats, list(self.feature_names), kinds, self.target, self.year, cats, self.row_ids)

    def with_columns(self, names: list[str], kinds: list[str], matrix) -> "Dataset":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (self.n_rows, len(names)):
            raise ValueError("new column block shape mismatch")
        feats = np.hstack([self.features, matrix])
        return Dataset(
            feats,
            list(self.feature_names) + list(names),
            list(self.feature_kinds) + list(kinds),
            self.target,
            self.year,
            dict(self.categories),
            self.row_ids,
        )

    def select_features(self, names: list[str]) -> "Dataset":
        idx = [self.feature_names.index(n) for n in names]
        cats = {k: v for k, v in self.categories.items() if k in names}
        return Dataset(
            self.features[:, idx],
            list(names),
            [self.feature_kinds[i] for i in idx],
            self.target,
            self.year,
            cats,
            self.row_ids,
        )


def concat(a: Dataset, b: Dataset) -> Dataset:
    """Stack two datasets with identical columns."""
    if a.feature_names != b.feature_names or a.feature_kinds != b.feature_kinds:
        raise ValueError("datasets have different columns")
    return Dataset(
        np.vstack([a.features, b.features]),
        list(a.feature_names),
        list(a.feature_kinds),
        np.r_[a.target, b.target],
        np.r_[a.year, b.year],
        dict(a.categories),
        np.r_[a.row_ids, b.row_ids],
    )


@dataclass(frozen=True)
class CsvSchema:
    """Column-kind declaration for CSV ingestion."""

    columns: dict[str, str]  # feature name -> kind
    target: str = "default"
    year: str = "year"

    def __post_init__(self):
        for name, kind in self.columns.items():
            if kind not in KINDS:
                raise ValueError(f"column {name!r} has unknown kind {kind!r}")
        if self.target in self.columns or self.year in self.columns:
            raise ValueError("target/year cannot also be feature columns")


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a UTF-8, RFC-4180 CSV into a Dataset.

    Empty cells become missing markers. Categorical labels are
    dictionary-encoded in first-appearance order.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        expected = set(schema.columns) | {schema.target, schema.year}
        if set(header) != expected:
            missing = expected - set(header)
            extra = set(header) - expected
            raise IngestionError(
                f"{path}: header does not match schema (missing={sorted(missing)}, unexpected={sorted(extra)})"
            )
        pos = {name: header.index(name) for name in header}
        names = list(schema.columns)
        kinds = [schema.columns[n] for n in names]
        vocab: dict[str, dict[str, int]] = {n: {} for n, k in zip(names, kinds) if k == "categorical"}

        rows: list[list[float]] = []
        targets: list[int] = []
        years: list[int] = []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise IngestionError(f"{path}:{lineno}: expected {len(header)} fields, got {len(record)}")
            out = []
            for name, kind in zip(names, kinds):
                cell = record[pos[name]]
                if cell == "":
                    out.append(np.nan)
                elif kind == "categorical":
                    codes = vocab[name]
                    out.append(float(codes.setdefault(cell, len(codes))))
                else:
                    try:
                        out.append(float(cell))
                    except ValueError:
                        raise IngestionError(
                            f"{path}:{lineno}: non-numeric token {cell!r} in numeric column {name!r}"
                        ) from None
            for label, col, caster in ((schema.target, pos[schema.target], int), (schema.year, pos[schema.year], int)):
                cell = record[col]
                try:
                    value = caster(cell)
                except ValueError:
                    raise IngestionError(f"{path}:{lineno}: bad value {cell!r} in column {label!r}") from None
                (targets if label == schema.target else years).append(value)
            rows.append(out)

        features = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
        categories = {n: [lab for lab, _ in sorted(v.items(), key=lambda kv: kv[1])] for n, v in vocab.items()}
        return Dataset(features, names, kinds, np.asarray(targets), np.asarray(years), categories)


@dataclass
class BalanceSheetRow:
    """One annual statement; any field may be None (missing)."""

    cashAndMarketableSecurities: Optional[float] = None
    totalAccountsReceivable: Optional[float] = None
    totalCurrentLiabilities: Optional[float] = None
    totalSales: Optional[float] = None
    totalCurrentAssets: Optional[float] = None
    ebitda: Optional[float] = None
    totalInterestExpense: Optional[float] = None
    totalLiabilities: Optional[float] = None
    netWorth: Optional[float] = None
    netIncome: Optional[float] = None
    totalAmortizationAndDepreciaton: Optional[float] = None
    depreciationExpense: Optional[float] = None
    workingCapital: Optional[float] = None
    totalInventory: Optional[float] = None
    totalLongTermDebt: Optional[float] = None
    longTermDebtCurrentMaturities: Optional[float] = None
    totalOperatingProfit: Optional[float] = None
    totalAssets: Optional[float] = None
    financialStatementDate: Optional[dt.date] = None
    incorporationDate: Optional[dt.date] = None

    def __post_init__(self):
        fsd, inc = self.financialStatementDate, self.incorporationDate
        if fsd is not None and inc is not None and fsd < inc:
            raise ValueError("financialStatementDate precedes incorporationDate")


KPI_NAMES = (
    "ACID",
    "ACTIVITY",
    "AGE",
    "ASSET_TURNOVER",
    "CURRENT_RATIO",
    "DEBT_COVERAGE",
    "DEBT_EQUITY",
    "EBITDA_RATIO",
    "FFO",
    "IND_ROTA",
    "IND_STRUTT",
    "INVENTORY_TURNOVER",
    "LEVERAGE_1",
    "LEVERAGE_2",
    "LONG-TERM-DEBT_EQUITY",
    "NETINCOME_RATIO",
    "PFN",
    "ROA",
    "ROE",
    "ROI",
    "SHORT-TERM-DEBT_EQUITY",
)


def _add(*xs):
    if any(x is None for x in xs):
        return None
    return float(sum(xs))


def _div(num, den):
    if num is None or den is None or den == 0:
        return None
    return num / den


def compute_kpis(row: BalanceSheetRow) -> dict[str, float]:
    """Financial ratios from one statement; missing operands or zero
    denominators propagate as NaN, never exceptions."""
    ffo = _add(row.netIncome, row.totalAmortizationAndDepreciaton, row.depreciationExpense)
    pfn = None
    if None not in (row.totalLongTermDebt, row.longTermDebtCurrentMaturities, row.cashAndMarketableSecurities):
        pfn = row.totalLongTermDebt + row.longTermDebtCurrentMaturities - row.cashAndMarketableSecurities
    age = None
    if row.financialStatementDate is not None and row.incorporationDate is not None:
        age = (row.financialStatementDate - row.incorporationDate).days / 365.0

    kpis = {
        "ACID": _div(_add(row.cashAndMarketableSecurities, row.totalAccountsReceivable), row.totalCurrentLiabilities),
        "ACTIVITY": _div(row.totalCurrentLiabilities, row.totalSales),
        "AGE": age,
        "ASSET_TURNOVER": _div(row.totalSales, row.totalAssets),
        "CURRENT_RATIO": _div(row.totalCurrentAssets, row.totalCurrentLiabilities),
        "DEBT_COVERAGE": _div(row.ebitda, row.totalInterestExpense),
        "DEBT_EQUITY": _div(row.totalLiabilities, row.netWorth),
        "EBITDA_RATIO": _div(row.ebitda, row.totalSales),
        "FFO": ffo,
        "IND_ROTA": _div(row.workingCapital, row.totalSales),
        "IND_STRUTT": _div(pfn, row.netWorth),
        "INVENTORY_TURNOVER": _div(row.totalInventory, row.totalSales),
        "LEVERAGE_1": _div(pfn, row.ebitda),
        "LEVERAGE_2": _div(ffo, pfn),
        "LONG-TERM-DEBT_EQUITY": _div(row.totalLongTermDebt, row.netWorth),
        "NETINCOME_RATIO": _div(row.netIncome, row.totalSales),
        "PFN": pfn,
        "ROA": _div(row.netIncome, row.totalAssets),
        "ROE": _div(row.netIncome, row.netWorth),
        "ROI": _div(row.totalOperatingProfit, row.totalAssets),
        "SHORT-TERM-DEBT_EQUITY": _div(row.totalCurrentLiabilities, row.netWorth),
    }
    return {k: (np.nan if v is None else float(v)) for k, v in kpis.items()}


BALANCE_SHEET_FIELDS = [
    "cashAndMarketableSecurities",
    "totalAccountsReceivable",
    "totalCurrentLiabilities",
    "totalSales",
    "totalCurrentAssets",
    "ebitda",
    "totalInterestExpense",
    "totalLiabilities",
    "netWorth",
    "netIncome",
    "totalAmortizationAndDepreciaton",
    "depreciationExpense",
    "workingCapital",
    "totalInventory",
    "totalLongTermDebt",
    "longTermDebtCurrentMaturities",
    "totalOperatingProfit",
    "totalAssets",
]

_DATE_FIELDS = ("financialStatementDate", "incorporationDate")


def load_balance_sheet_csv(path, target: str = "default", year: str = "year") -> Dataset:
    """Read annual statements and emit one KPI feature column per ratio.

    Expects the balance-sheet amount columns plus ISO-8601 date columns,
    a binary target and a statement year; empty cells are missing.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        expected = set(BALANCE_SHEET_FIELDS) | set(_DATE_FIELDS) | {target, year}
        if set(header) != expected:
            missing = expected - set(header)
            extra = set(header) - expected
            raise IngestionError(
                f"{path}: header does not match the balance-sheet schema "
                f"(missing={sorted(missing)}, unexpected={sorted(extra)})"
            )
        pos = {name: header.index(name) for name in header}

        rows: list[dict] = []
        targets: list[int] = []
        years: list[int] = []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise IngestionError(f"{path}:{lineno}: expected {len(header)} fields, got {len(record)}")
            kwargs = {}
            for name in BALANCE_SHEET_FIELDS:
                cell = record[pos[name]]
                if cell == "":
                    kwargs[name] = None
                else:
                    try:
                        kwargs[name] = float(cell)
                    except ValueError:
                        raise IngestionError(
                            f"{path}:{lineno}: non-numeric token {cell!r} in column {name!r}"
                        ) from None
            for name in _DATE_FIELDS:
                cell = record[pos[name]]
                if cell == "":
                    kwargs[name] = None
                else:
                    try:
                        kwargs[name] = dt.date.fromisoformat(cell)
                    except ValueError:
                        raise IngestionError(f"{path}:{lineno}: bad ISO date {cell!r} in column {name!r}") from None
            try:
                row = BalanceSheetRow(**kwargs)
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from None
            rows.append(compute_kpis(row))
            try:
                targets.append(int(record[pos[target]]))
                years.append(int(record[pos[year]]))
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: bad target/year value") from None

        names = list(KPI_NAMES)
        features = np.array([[r[k] for k in names] for r in rows], dtype=np.float64).reshape(len(rows), len(names))
        return Dataset(features, names, ["numeric"] * len(names), np.asarray(targets), np.asarray(years), {})


@dataclass(frozen=True)
class SplitSpec:
    oot_year: int
    test_fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie strictly between 0 and 1")


def split_out_of_time(ds: Dataset, oot_year: int) -> tuple[Dataset, Dataset]:
    """All rows before oot_year vs rows of exactly oot_year.

    Rows after oot_year are rejected so the split is a partition.
    """
    if (ds.year > oot_year).any():
        raise SplitError(f"rows with year beyond {oot_year} present")
    train_idx = np.flatnonzero(ds.year < oot_year)
    test_idx = np.flatnonzero(ds.year == oot_year)
    if train_idx.size == 0 or test_idx.size == 0:
        raise SplitError(f"out-of-time split at {oot_year} leaves an empty side")
    return ds.take(train_idx), ds.take(test_idx)


def stratified_split(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-class random split; the second part receives round(fraction * class count)
    rows of each class. Deterministic for a fixed seed."""
    if not 0.0 < fraction < 1.0:
        raise SplitError("fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    test_parts = []
    train_parts = []
    for cls in (0, 1):
        idx = np.flatnonzero(ds.target == cls)
        if idx.size == 0:
            raise SplitError("both classes must be present")
        if idx.size < 2:
            raise SplitError(f"class {cls} has fewer than 2 rows")
        n_test = round(fraction * idx.size)
        if n_test == 0:
            warnings.warn(f"class {cls} contributes no rows to the held-out part", stacklevel=2)
        perm = rng.permutation(idx)
        test_parts.append(perm[:n_test])
        train_parts.append(perm[n_test:])
    train_idx = np.sort(np.concatenate(train_parts))
    test_idx = np.sort(np.concatenate(test_parts))
    return ds.take(train_idx), ds.take(test_idx)
