"""End-to-end pipeline: prep, selection, training, calibration, rating,
validation and explanation, driven by a JSON config.

Each stage reads its upstream inputs from persisted artifacts (plus the
deterministic data preparation derived from the config), so rerunning a
downstream stage alone reproduces the full-pipeline result. No artifact
carries a timestamp; reruns with the same config are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autoencoder, backtesting, boosting, calibration, encoders, explain, metrics, rating, selection, synthetic
from .dataset import CsvSchema, Dataset, load_balance_sheet_csv, load_csv, split_out_of_time, stratified_split


class ConfigError(ValueError):
    pass


class DependencyError(RuntimeError):
    """A stage input artifact is missing."""


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class EmbeddingConfig:
    path: str
    key_column: str
    dims: tuple
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class ExplainConfig:
    n_instances: int = 5
    background_size: int = 20
    lime_samples: int = 2000
    kernel_width: float = 1.0
    top_k: int = 5
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    raw: dict
    data_mode: str  # "csv" | "balance_sheet_csv" | "synth"
    csv_path: Optional[str]
    schema: Optional[CsvSchema]
    synth_spec: Optional[synthetic.GeneratorSpec]
    clip_percentiles: Optional[tuple]
    oot_year: int
    test_fraction: float
    split_seed: int
    embeddings: Optional[EmbeddingConfig]
    selection: selection.SelectionConfig
    beta: float
    grid: list
    c_grid: list
    n_reliability_bins: int
    n_classes: int
    de: rating.DeConfig
    alpha: float
    traffic: backtesting.TrafficLightParams
    explain: ExplainConfig

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(_dumps(self.raw).encode()).hexdigest()[:16]

    def seeds(self) -> dict:
        seeds = {"split": self.split_seed, "de": self.de.seed, "explain": self.explain.seed}
        seeds["gbdt"] = [g.seed for g in self.grid]
        if self.synth_spec is not None:
            seeds["synth"] = self.synth_spec.seed
        if self.embeddings is not None:
            seeds["autoencoder"] = self.embeddings.seed
        return seeds


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def load_config(path_or_dict) -> PipelineConfig:
    """Parse and validate the pipeline config before any compute happens."""
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        with open(path_or_dict, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    try:
        data = raw["data"]
    except KeyError:
        raise ConfigError("config is missing the 'data' section") from None

    csv_path = schema = synth_spec = None
    if "synth" in data:
        data_mode = "synth"
        synth_spec = synthetic.GeneratorSpec.from_dict(data["synth"])
    elif "balance_sheet_csv" in data:
        data_mode = "balance_sheet_csv"
        csv_path = data["balance_sheet_csv"]
    elif "csv" in data:
        data_mode = "csv"
        csv_path = data["csv"]
        try:
            sch = data["schema"]
            schema = CsvSchema(
                columns=dict(sch["columns"]),
                target=sch.get("target", "default"),
                year=sch.get("year", "year"),
            )
        except KeyError as exc:
            raise ConfigError(f"csv data mode needs a schema section ({exc})") from None
    else:
        raise ConfigError("data section must declare one of: synth, csv, balance_sheet_csv")

    clip = data.get("clip_percentiles")
    if clip is not None:
        clip = (float(clip[0]), float(clip[1]))
        if not 0.0 <= clip[0] < clip[1] <= 1.0:
            raise ConfigError("clip_percentiles must satisfy 0 <= low < high <= 1")

    try:
        split = raw["split"]
        oot_year = int(split["oot_year"])
        test_fraction = float(split.get("test_fraction", 0.2))
        split_seed = int(split.get("seed", 0))
    except KeyError as exc:
        raise ConfigError(f"split section incomplete: missing {exc}") from None
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie strictly between 0 and 1")

    emb = None
    if "embeddings" in raw:
        e = raw["embeddings"]
        try:
            emb = EmbeddingConfig(
                path=e["path"],
                key_column=e["key_column"],
                dims=tuple(e["dims"]),
                epochs=int(e.get("epochs", 50)),
                batch_size=int(e.get("batch_size", 16)),
                learning_rate=float(e.get("learning_rate", 0.05)),
                seed=int(e.get("seed", 0)),
            )
        except KeyError as exc:
            raise ConfigError(f"embeddings section incomplete: missing {exc}") from None

    sel = raw.get("selection", {})
    sel_cfg = selection.SelectionConfig(
        n_final=int(sel.get("n_final", 15)),
        k_per_method=int(sel.get("k_per_method", 0)),
        n_bins=int(sel.get("n_bins", 10)),
        rfe_step=int(sel.get("rfe_step", 1)),
        l1_c=float(sel.get("l1_c", 0.1)),
        tree_seed=int(sel.get("seed", 0)),
    )

    gb = raw.get("gbdt", {})
    beta = float(gb.get("beta", 1.0))
    grid_dicts = gb.get("grid", [{}])
    try:
        grid = [boosting.GbdtConfig.from_dict({**boosting.GbdtConfig().to_dict(), **g}) for g in grid_dicts]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad gbdt grid entry: {exc}") from None
    if beta <= 0:
        raise ConfigError("beta must be positive")

    cal = raw.get("calibration", {})
    c_grid = [float(c) for c in cal.get("c_grid", [0.01, 0.1, 1.0, 10.0, 100.0])]
    n_rel_bins = int(cal.get("n_reliability_bins", 10))
    if not c_grid:
        raise ConfigError("calibration c_grid must not be empty")

    rat = raw.get("rating", {})
    try:
        de = rating.DeConfig.from_dict({**rating.DeConfig().to_dict(), **rat.get("de", {})})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad rating.de section: {exc}") from None
    n_classes = int(rat.get("n_classes", 9))

    val = raw.get("validation", {})
    alpha = float(val.get("alpha", 0.95))
    try:
        traffic = backtesting.TrafficLightParams(
            k_yellow=float(val.get("k_yellow", 0.84)), k_orange=float(val.get("k_orange", 1.44))
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie strictly between 0 and 1")

    ex = raw.get("explain", {})
    explain_cfg = ExplainConfig(
        n_instances=int(ex.get("n_instances", 5)),
        background_size=int(ex.get("background_size", 20)),
        lime_samples=int(ex.get("lime_samples", 2000)),
        kernel_width=float(ex.get("kernel_width", 1.0)),
        top_k=int(ex.get("top_k", 5)),
        seed=int(ex.get("seed", 0)),
    )

    return PipelineConfig(
        raw=raw,
        data_mode=data_mode,
        csv_path=csv_path,
        schema=schema,
        synth_spec=synth_spec,
        clip_percentiles=clip,
        oot_year=oot_year,
        test_fraction=test_fraction,
        split_seed=split_seed,
        embeddings=emb,
        selection=sel_cfg,
        beta=beta,
        grid=grid,
        c_grid=c_grid,
        n_reliability_bins=n_rel_bins,
        n_classes=n_classes,
        de=de,
        alpha=alpha,
        traffic=traffic,
        explain=explain_cfg,
    )


@dataclass
class PreparedData:
    """Deterministic data bundle shared by all stages."""

    full: Dataset  # encoded full dataset
    train_all_pos: np.ndarray  # positions into full
    oot_pos: np.ndarray
    gbdt_train_pos: np.ndarray
    calib_pos: np.ndarray
    holdout_pos: np.ndarray
    true_pd: Optional[np.ndarray]  # aligned with full rows (synth only)

    def view(self, pos: np.ndarray) -> Dataset:
        return self.full.take(pos)


def _load_raw(cfg: PipelineConfig) -> tuple[Dataset, Optional[np.ndarray]]:
    if cfg.data_mode == "synth":
        ds, true_pd = synthetic.generate(cfg.synth_spec)
        return ds, true_pd
    if cfg.data_mode == "balance_sheet_csv":
        return load_balance_sheet_csv(cfg.csv_path), None
    return load_csv(cfg.csv_path, cfg.schema), None


def prepare(cfg: PipelineConfig) -> PreparedData:
    """Load, clip, join embeddings, split and target-encode.

    James-Stein encoders are fitted on the classifier-training part only and
    then applied everywhere, so held-out targets cannot move any encoding.
    """
    ds, true_pd = _load_raw(cfg)
    if not np.array_equal(ds.row_ids, np.arange(ds.n_rows)):
        raise RuntimeError("freshly loaded dataset must have positional row ids")

    if cfg.embeddings is not None:
        ds = _join_embeddings(ds, cfg.embeddings)

    if cfg.clip_percentiles is not None:
        ds = _clip_numeric(ds, cfg.clip_percentiles, cfg.oot_year)

    train_all, oot = split_out_of_time(ds, cfg.oot_year)
    part80, part20 = stratified_split(train_all, cfg.test_fraction, cfg.split_seed)

    gbdt_pos = part80.row_ids
    calib_pos = part20.row_ids
    oot_pos = oot.row_ids
    last_year = int(part80.year.max())
    holdout_pos = gbdt_pos[part80.year == last_year]

    # target-encode categoricals with statistics from the classifier-train part only
    encoded = ds
    for name, kind in zip(ds.feature_names, ds.feature_kinds):
        if kind != "categorical":
            continue
        col = ds.column(name)
        enc = encoders.fit_james_stein(col[gbdt_pos], ds.target[gbdt_pos])
        encoded = encoded.replace_column(name, encoders.transform_james_stein(enc, col), "numeric")

    return PreparedData(
        full=encoded,
        train_all_pos=train_all.row_ids,
        oot_pos=oot_pos,
        gbdt_train_pos=gbdt_pos,
        calib_pos=calib_pos,
        holdout_pos=holdout_pos,
        true_pd=true_pd,
    )


def _join_embeddings(ds: Dataset, cfg: EmbeddingConfig) -> Dataset:
    table = encoders.load_embeddings(cfg.path)
    params = autoencoder.init(cfg.dims, seed=cfg.seed)
    params, _ = autoencoder.train(
        params, table.vectors, epochs=cfg.epochs, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, seed=cfg.seed,
    )
    names, keys, codes = autoencoder.encode_all(params, table)
    key_to_code = {k: codes[i] for i, k in enumerate(keys)}

    labels = ds.categories.get(cfg.key_column)
    if labels is None:
        raise ConfigError(f"embeddings key_column {cfg.key_column!r} is not a categorical column")
    col = ds.column(cfg.key_column)
    block = np.full((ds.n_rows, len(names)), np.nan)
    for i in range(ds.n_rows):
        code = col[i]
        if np.isnan(code):
            continue
        vec = key_to_code.get(labels[int(code)])
        if vec is not None:
            block[i] = vec
    return ds.with_columns(names, ["embedding"] * len(names), block)


def _clip_numeric(ds: Dataset, bounds: tuple, oot_year: int) -> Dataset:
    low, high = bounds
    train_mask = ds.year < oot_year
    feats = ds.features.copy()
    for j, kind in enumerate(ds.feature_kinds):
        if kind != "numeric":
            continue
        col = feats[train_mask, j]
        col = col[~np.isnan(col)]
        if col.size == 0:
            continue
        lo, hi = np.quantile(col, [low, high])
        feats[:, j] = np.clip(feats[:, j], lo, hi)
    return Dataset(feats, list(ds.feature_names), list(ds.feature_kinds), ds.target, ds.year, dict(ds.categories), ds.row_ids)


# ---------------------------------------------------------------- artifacts


def _meta(cfg: PipelineConfig) -> dict:
    return {"config_hash": cfg.config_hash, "seeds": cfg.seeds()}


def _write_json(path: str, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(payload))
        fh.write("\n")


def _read_json(path: str, stage: str) -> dict:
    if not os.path.exists(path):
        raise DependencyError(f"stage {stage!r} needs missing artifact {os.path.basename(path)}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_csv(path: str, fieldnames: list[str], rows: list[dict], meta: dict):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={meta['config_hash']} seeds={json.dumps(meta['seeds'], sort_keys=True)}\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fieldnames})


# ------------------------------------------------------------------ stages


def stage_synth(cfg: PipelineConfig, out_dir: str) -> list[str]:
    """Write the synthetic dataset as a schema-conformant CSV plus the latent
    PD sidecar."""
    if cfg.synth_spec is None:
        raise ConfigError("synth stage requires a data.synth section")
    ds, true_pd = synthetic.generate(cfg.synth_spec)
    data_path = os.path.join(out_dir, "synth_data.csv")
    with open(data_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.feature_names + ["default", "year"])
        for i in range(ds.n_rows):
            row = []
            for j, (name, kind) in enumerate(zip(ds.feature_names, ds.feature_kinds)):
                v = ds.features[i, j]
                if np.isnan(v):
                    row.append("")
                elif kind == "categorical":
                    row.append(ds.categories[name][int(v)])
                else:
                    row.append(repr(float(v)))
            row.append(int(ds.target[i]))
            row.append(int(ds.year[i]))
            writer.writerow(row)
    pd_path = os.path.join(out_dir, "synth_true_pd.csv")
    _write_csv(
        pd_path,
        ["row", "true_pd"],
        [{"row": i, "true_pd": repr(float(p))} for i, p in enumerate(true_pd)],
        _meta(cfg),
    )
    return [data_path, pd_path]


def synth_schema(spec: synthetic.GeneratorSpec) -> CsvSchema:
    """Schema matching stage_synth output for reloading with load_csv."""
    columns = {f"inf_{j}": "numeric" for j in range(spec.n_informative)}
    columns.update({f"noise_{j}": "numeric" for j in range(spec.n_noise)})
    columns.update({f"cat_{j}": "categorical" for j in range(spec.n_categorical)})
    return CsvSchema(columns=columns, target="default", year="year")


def stage_train(cfg: PipelineConfig, out_dir: str) -> list[str]:
    """Prep, feature selection, out-of-time tuning and the final model fit."""
    prep = prepare(cfg)
    part80 = prep.view(prep.gbdt_train_pos)

    report = selection.run_selection(part80, cfg.selection)
    part80_sel = part80.select_features(report.selected)

    best_cfg, cv = boosting.oot_cv_tune(part80_sel, cfg.grid, cfg.beta)
    model = boosting.fit(part80_sel, best_cfg)

    meta = _meta(cfg)
    paths = []

    split_path = os.path.join(out_dir, "split.json")
    _write_json(
        split_path,
        {
            **meta,
            "oot_year": cfg.oot_year,
            "gbdt_train_rows": prep.gbdt_train_pos.tolist(),
            "calibration_rows": prep.calib_pos.tolist(),
            "c_holdout_rows": prep.holdout_pos.tolist(),
            "oot_rows": prep.oot_pos.tolist(),
        },
    )
    paths.append(split_path)

    sel_path = os.path.join(out_dir, "selection.json")
    _write_json(sel_path, {**meta, **report.to_dict()})
    paths.append(sel_path)

    cv_path = os.path.join(out_dir, "cv_table.json")
    _write_json(
        cv_path,
        {
            **meta,
            "beta": cfg.beta,
            "threshold": 0.5,
            "folds": [
                {
                    "candidate": r.candidate,
                    "test_year": r.test_year,
                    "f_beta": r.f_beta,
                    "tp": r.tp,
                    "fp": r.fp,
                    "tn": r.tn,
                    "fn": r.fn,
                }
                for r in cv.folds
            ],
            "mean_scores": {str(k): v for k, v in cv.mean_scores.items()},
            "discarded": {str(k): v for k, v in cv.discarded.items()},
            "chosen": best_cfg.to_dict(),
        },
    )
    paths.append(cv_path)

    model_path = os.path.join(out_dir, "model.json")
    _write_json(model_path, {**meta, **model.to_dict(), "features": report.selected})
    paths.append(model_path)
    return paths


def _load_model(out_dir: str, stage: str) -> tuple[boosting.GbdtModel, list[str]]:
    d = _read_json(os.path.join(out_dir, "model.json"), stage)
    return boosting.GbdtModel.from_dict(d), list(d["features"])


def _load_split(out_dir: str, stage: str) -> dict:
    return _read_json(os.path.join(out_dir, "split.json"), stage)


def _assert_disjoint(split: dict):
    train = set(split["gbdt_train_rows"])
    calib = set(split["calibration_rows"])
    overlap = train & calib
    if overlap:
        raise AssertionError(f"classifier and calibrator training rows overlap: {sorted(overlap)[:5]} ...")


def stage_calibrate(cfg: PipelineConfig, out_dir: str) -> list[str]:
    """Fit the leaf calibrator and emit calibration metrics and curves."""
    model, features = _load_model(out_dir, "calibrate")
    split = _load_split(out_dir, "calibrate")
    _assert_disjoint(split)
    prep = prepare(cfg)

    calib_ds = prep.view(np.asarray(split["calibration_rows"])).select_features(features)
    holdout_ds = prep.view(np.asarray(split["c_holdout_rows"])).select_features(features)
    eval_ds = prep.view(np.asarray(split["gbdt_train_rows"])).select_features(features)
    oot_ds = prep.view(np.asarray(split["oot_rows"])).select_features(features)

    cal = calibration.fit_calibrator(model, calib_ds, cfg.c_grid, holdout_ds)

    raw_oot = boosting.predict_proba(model, oot_ds)
    cal_oot = calibration.calibrated_pd(cal, model, oot_ds)
    raw_eval = boosting.predict_proba(model, eval_ds)
    cal_eval = calibration.calibrated_pd(cal, model, eval_ds)

    _, auc_raw = metrics.roc_auc(raw_oot, oot_ds.target)
    curve, auc_cal = metrics.roc_auc(cal_oot, oot_ds.target)
    youden = metrics.youden_threshold(cal_oot, oot_ds.target)
    cm_raw = metrics.confusion(raw_oot, oot_ds.target, 0.5)
    cm_cal = metrics.confusion(cal_oot, oot_ds.target, youden)

    meta = _meta(cfg)
    paths = []

    cal_path = os.path.join(out_dir, "calibrator.json")
    _write_json(cal_path, {**meta, **cal.to_dict()})
    paths.append(cal_path)

    payload = {
        **meta,
        "leakage_check": "passed",
        "selected_c": cal.c,
        "oot": {
            "auroc_raw": auc_raw,
            "auroc_calibrated": auc_cal,
            "brier_raw": metrics.brier(raw_oot, oot_ds.target),
            "brier_calibrated": metrics.brier(cal_oot, oot_ds.target),
            "log_loss_raw": metrics.log_loss(raw_oot, oot_ds.target),
            "log_loss_calibrated": metrics.log_loss(cal_oot, oot_ds.target),
            "confusion_raw_threshold_0.5": {"tp": cm_raw.tp, "fp": cm_raw.fp, "tn": cm_raw.tn, "fn": cm_raw.fn},
            "confusion_calibrated_youden": {
                "threshold": youden,
                "threshold_rule": "maximizes tpr - fpr on the ROC",
                "tp": cm_cal.tp,
                "fp": cm_cal.fp,
                "tn": cm_cal.tn,
                "fn": cm_cal.fn,
            },
        },
        "eval_part": {
            "brier_raw": metrics.brier(raw_eval, eval_ds.target),
            "brier_calibrated": metrics.brier(cal_eval, eval_ds.target),
            "log_loss_raw": metrics.log_loss(raw_eval, eval_ds.target),
            "log_loss_calibrated": metrics.log_loss(cal_eval, eval_ds.target),
        },
    }
    if prep.true_pd is not None:
        oot_true = prep.true_pd[np.asarray(split["oot_rows"])]
        bayes_auc, irreducible = synthetic.bayes_metrics(oot_true, oot_ds.target)
        payload["oot"]["bayes_auroc"] = bayes_auc
        payload["oot"]["irreducible_brier"] = irreducible
    metrics_path = os.path.join(out_dir, "calibration_metrics.json")
    _write_json(metrics_path, payload)
    paths.append(metrics_path)

    for tag, pd_col, ds in (("eval", cal_eval, eval_ds), ("oot", cal_oot, oot_ds)):
        rel = calibration.reliability_curve(pd_col, ds.target, cfg.n_reliability_bins)
        path = os.path.join(out_dir, f"reliability_{tag}.csv")
        _write_csv(path, ["bin_low", "bin_high", "mean_pred", "obs_freq", "count"], rel.to_rows(), meta)
        paths.append(path)

    roc_path = os.path.join(out_dir, "roc_oot.csv")
    _write_csv(
        roc_path,
        ["fpr", "tpr", "threshold"],
        [{"fpr": float(a), "tpr": float(b), "threshold": float(c)} for a, b, c in curve],
        meta,
    )
    paths.append(roc_path)
    return paths


def stage_rate(cfg: PipelineConfig, out_dir: str) -> list[str]:
    """Optimize the rating scale on calibrated PDs of the evaluation part."""
    model, features = _load_model(out_dir, "rate")
    split = _load_split(out_dir, "rate")
    cal = calibration.Calibrator.from_dict(_read_json(os.path.join(out_dir, "calibrator.json"), "rate"))
    prep = prepare(cfg)

    fit_ds = prep.view(np.asarray(split["gbdt_train_rows"])).select_features(features)
    pds = calibration.calibrated_pd(cal, model, fit_ds)
    scale = rating.de_optimize(pds, fit_ds.target.astype(float), cfg.de, n_classes=cfg.n_classes)

    meta = _meta(cfg)
    scale_json = os.path.join(out_dir, "rating_scale.json")
    _write_json(scale_json, {**meta, **scale.to_dict()})
    scale_csv = os.path.join(out_dir, "rating_scale.csv")
    _write_csv(scale_csv, ["label", "bin_low", "bin_high", "class_pd", "share"], scale.to_table_rows(), meta)
    return [scale_json, scale_csv]


def stage_validate(cfg: PipelineConfig, out_dir: str) -> list[str]:
    """Back-test the persisted scale on the out-of-time year."""
    model, features = _load_model(out_dir, "validate")
    split = _load_split(out_dir, "validate")
    cal = calibration.Calibrator.from_dict(_read_json(os.path.join(out_dir, "calibrator.json"), "validate"))
    scale = rating.RatingScale.from_dict(_read_json(os.path.join(out_dir, "rating_scale.json"), "validate"))
    prep = prepare(cfg)

    oot_ds = prep.view(np.asarray(split["oot_rows"])).select_features(features)
    pds = calibration.calibrated_pd(cal, model, oot_ds)
    report = backtesting.validate_scale(
        scale, pds, oot_ds.target, alpha=cfg.alpha, params=cfg.traffic, n_reliability_bins=cfg.n_reliability_bins
    )

    meta = _meta(cfg)
    report_json = os.path.join(out_dir, "validation_report.json")
    _write_json(report_json, {**meta, **report.to_dict()})
    rows = []
    for cls, (lo, hi) in zip(report.classes, scale.bin_bounds()):
        d = cls.to_dict()
        d["bin_low"], d["bin_high"] = lo, hi
        rows.append(d)
    report_csv = os.path.join(out_dir, "validation_report.csv")
    _write_csv(
        report_csv,
        ["label", "bin_low", "bin_high", "class_pd", "n", "defaults", "observed_rate", "binomial_test", "traffic_light"],
        rows,
        meta,
    )
    return [report_json, report_csv]


def stage_explain(cfg: PipelineConfig, out_dir: str) -> list[str]:
    """Shapley and surrogate explanations for the highest-PD firms."""
    model, features = _load_model(out_dir, "explain")
    split = _load_split(out_dir, "explain")
    cal = calibration.Calibrator.from_dict(_read_json(os.path.join(out_dir, "calibrator.json"), "explain"))
    prep = prepare(cfg)
    ex = cfg.explain

    oot_ds = prep.view(np.asarray(split["oot_rows"])).select_features(features)
    train_ds = prep.view(np.asarray(split["gbdt_train_rows"])).select_features(features)

    if len(features) > explain.MAX_EXACT_FEATURES:
        raise explain.ExplainError(
            f"{len(features)} post-selection features exceed the exact Shapley cap of "
            f"{explain.MAX_EXACT_FEATURES}; lower selection.n_final"
        )

    pds = calibration.calibrated_pd(cal, model, oot_ds)
    order = np.lexsort((oot_ds.row_ids, -pds))
    pick = order[: min(ex.n_instances, oot_ds.n_rows)]

    rng = np.random.default_rng(ex.seed)
    bg_idx = rng.choice(train_ds.n_rows, size=min(ex.background_size, train_ds.n_rows), replace=False)
    background = train_ds.features[np.sort(bg_idx)]

    def score_fn(X):
        return boosting.predict_score(model, X)

    explanations = []
    lime_rows = []
    X_instances = oot_ds.features[pick]
    for i, pos in enumerate(pick):
        x = oot_ds.features[pos]
        explanations.append(explain.exact_shapley(score_fn, x, background))
        lime_rows.append(
            explain.lime_explain(
                score_fn,
                x,
                background,
                n_samples=ex.lime_samples,
                kernel_width=ex.kernel_width,
                k=ex.top_k,
                seed=ex.seed + i,
            )
        )
    summary = explain.summary_stats(explanations, X_instances, features)

    meta = _meta(cfg)
    expl_json = os.path.join(out_dir, "explanations.json")
    _write_json(
        expl_json,
        {
            **meta,
            "score_space": "log-odds",
            "instances": [
                {
                    "row_id": int(oot_ds.row_ids[pos]),
                    "calibrated_pd": float(pds[pos]),
                    "shapley": e.to_dict(),
                    "lime": l.to_dict(),
                }
                for pos, e, l in zip(pick, explanations, lime_rows)
            ],
            "summary": {"mean_abs_phi": summary["mean_abs_phi"], "ranking": summary["ranking"]},
        },
    )
    shap_csv = os.path.join(out_dir, "shap_long.csv")
    _write_csv(shap_csv, ["instance", "feature", "phi", "feature_value"], summary["records"], meta)
    return [expl_json, shap_csv]


STAGES = {
    "train": stage_train,
    "calibrate": stage_calibrate,
    "rate": stage_rate,
    "validate": stage_validate,
    "explain": stage_explain,
}

STAGE_ORDER = ["train", "calibrate", "rate", "validate", "explain"]


def run_pipeline(cfg: PipelineConfig, out_dir: str) -> dict:
    """Run every stage in order; on failure persist a partial manifest and
    re-raise with the stage name."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"config_hash": cfg.config_hash, "seeds": cfg.seeds(), "stages": {}, "status": "running"}
    try:
        for name in STAGE_ORDER:
            paths = STAGES[name](cfg, out_dir)
            manifest["stages"][name] = [os.path.basename(p) for p in paths]
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["failed_stage"] = name
        manifest["error"] = str(exc)
        _write_json(os.path.join(out_dir, "manifest.json"), manifest)
        raise PipelineStageError(name, exc) from exc
    manifest["status"] = "ok"
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest
