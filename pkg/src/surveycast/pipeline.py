"""Pipeline stages behind the CLI: each stage reads its input artifacts,
writes its outputs under the run directory, and drops a JSON run-manifest
(config hash, seed, versions, wall time) alongside.

Stage layout under the output directory:

    synth/        data.csv, metadata.csv, outcomes.csv, truth_outcomes.csv,
                  splits.json, synth_manifest.json, composite_mapping.json
    ingest/       dataset.npz
    preprocess/   encoded.npz, preprocess_report.json
    select/       mi_sets_k<k>.json, mi_union_k<k>.json, lasso_sets.json
    models/       <model>/<outcome>.json (+ per-model info)
    predictions/  <source>.csv  (submission-shaped)
    evaluate/     eval_report.json, scores.csv, scatter.csv
    report/       importance_*.csv, selection_comparison.csv, *.svg
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from copy import deepcopy
from multiprocessing import get_context
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .ensemble import PredictionSet, ranks_from_scores, simple_average, stack, weighted_average
from .evaluate import (
    aggregate_importance,
    evaluate_predictions,
    importance_table,
    relative_improvement,
)
from .featsel import lasso_select, mi_score_table, select_top_k_mi, selection_comparison
from .ingest import (
    BINARY_OUTCOMES,
    CONTINUOUS_OUTCOMES,
    Dataset,
    OUTCOME_NAMES,
    OutcomeSet,
    classify_dataset,
    load_dataset,
    load_dataset_npz,
    load_kind_overrides,
    load_outcomes,
    save_dataset_npz,
)
from .linear import LinearModel, fit_elastic_net_cv
from .preprocess import (
    EncodedColumn,
    EncodedDataset,
    inverse_transform_outcome_square,
    preprocess_pipeline,
    transform_features,
    transform_outcome_square,
)
from .synth import SynthConfig, generate, write_synth
from .trees import FeatureBinner, ForestModel, GbtModel, feature_importance, fit_gbt, fit_random_forest
from .tuning import GridSpec, grid_search_cv, nested_forest_ensemble

log = logging.getLogger(__name__)

INDIVIDUAL_MODELS = ("elastic_net", "nested_rf", "lasso_rf", "gbt")
ENSEMBLE_SCHEMES = ("simple", "weighted", "stack-linear", "stack-forest")


class StageInputError(RuntimeError):
    """A stage's expected input artifact is absent."""


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "workers": 1,
    "outcomes": list(OUTCOME_NAMES),
    "synth": SynthConfig().to_dict(),
    "inputs": {},  # optional path overrides: data, metadata, outcomes, ...
    "preprocess": {"variance_threshold": 0.05, "max_missing_frac": 0.8},
    "select": {
        "mi_bins": 10,
        "elastic_net_k": 300,
        "nested_rf_k": 100,
        "lasso_target_r2": 0.4,
    },
    "elastic_net": {
        "alpha_grid": [float(a) for a in np.geomspace(1.0, 1e-3, 8)],
        "l1_ratio_grid": [0.5, 0.99],
        "folds": 3,
        "transforms": ["log", "sqrt", "square"],
        "outcome_transforms": {"gpa": "square"},
    },
    "nested_rf": {
        "n_iterations": 50,
        "fractions": [0.6, 0.2, 0.2],
        "grid": {"n_estimators": [50], "max_features": [0.33], "min_samples_leaf": [10, 40]},
    },
    "lasso_rf": {
        "folds": 3,
        "grid": {"n_estimators": [50], "max_features": [0.33], "min_samples_leaf": [10, 40]},
    },
    "gbt": {
        "folds": 3,
        # per-outcome single-cell grids centred on the reference tuning;
        # continuous outcomes run 500 rounds at desk scale (late rounds
        # only split residual noise on synthetic data) -- see
        # reference_gbt_grids() for the full 1000-round settings
        "grids": {
            "gpa": {"colsample_bytree": [0.4], "learning_rate": [0.01], "max_depth": [2],
                    "n_estimators": [500], "subsample": [0.6]},
            "grit": {"colsample_bytree": [0.8], "learning_rate": [0.01], "max_depth": [2],
                     "n_estimators": [500], "subsample": [0.6]},
            "material_hardship": {"colsample_bytree": [0.8], "learning_rate": [0.01], "max_depth": [5],
                                  "n_estimators": [500], "subsample": [0.4]},
            "eviction": {"colsample_bytree": [0.6], "learning_rate": [0.02], "max_depth": [2],
                         "n_estimators": [100], "subsample": [0.6]},
            "layoff": {"colsample_bytree": [0.8], "learning_rate": [0.05], "max_depth": [2],
                       "n_estimators": [100], "subsample": [0.6]},
            "job_training": {"colsample_bytree": [0.4], "learning_rate": [0.02], "max_depth": [2],
                             "n_estimators": [100], "subsample": [0.8]},
        },
    },
    "ensemble": {"stack_folds": 3},
    "report": {
        "top_n": 10,
        "k_values": [5, 15, 50],
        "r2_values": [0.2, 0.3, 0.4],
        "svg": True,
    },
}


def default_config() -> dict:
    return deepcopy(DEFAULT_CONFIG)


def reference_gbt_grids() -> dict:
    """Full-strength per-outcome boosting settings (1000 rounds for the
    continuous outcomes); drop into config["gbt"]["grids"] to override
    the desk-scale default."""
    grids = deepcopy(DEFAULT_CONFIG["gbt"]["grids"])
    for name in CONTINUOUS_OUTCOMES:
        grids[name]["n_estimators"] = [1000]
    return grids


def merge_config(user: dict | None) -> dict:
    """Defaults deep-merged with user overrides (dicts merge, lists replace)."""

    def merge(base, over):
        out = deepcopy(base)
        for k, v in (over or {}).items():
            if isinstance(v, dict) and isinstance(out.get(k), dict):
                out[k] = merge(out[k], v)
            else:
                out[k] = deepcopy(v)
        return out

    return merge(DEFAULT_CONFIG, user or {})


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def derive_seed(seed: int, *parts: str) -> int:
    entropy = [int(seed)] + [zlib.crc32(p.encode()) for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0] % (2**31))


def _write_manifest(out_dir: Path, stage: str, config: dict, started: float, artifacts: list):
    manifest = {
        "stage": stage,
        "config_hash": config_hash(config),
        "seed": config.get("seed"),
        "versions": {"surveycast": __version__, "numpy": np.__version__, "pandas": pd.__version__},
        "wall_time_s": round(time.time() - started, 3),
        "artifacts": [str(a) for a in artifacts],
    }
    path = out_dir / f"{stage.replace(' ', '_')}_run_manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def _require(path: Path, producer: str) -> Path:
    if not Path(path).exists():
        raise StageInputError(f"missing expected artifact {path}; run `surveycast {producer}` first")
    return Path(path)


def _input_path(config: dict, out: Path, key: str, default: Path) -> Path:
    override = config.get("inputs", {}).get(key)
    return Path(override) if override else default


def _selected_outcomes(config: dict) -> list[str]:
    names = [n for n in OUTCOME_NAMES if n in set(config["outcomes"])]
    if not names:
        raise ValueError("config selects no outcomes")
    return names


# --- worker pool ---------------------------------------------------------

_JOB_CONTEXT: dict = {}


def _call_job(fn_name: str, key):
    return key, _JOB_CONTEXT["fns"][fn_name](key)


def run_jobs(fn_name: str, fn, keys: list, workers: int) -> dict:
    """Run fn over keys, optionally in forked workers.

    Each job is independently seeded, so results are identical for any
    worker count; outputs are collected by key.
    """
    _JOB_CONTEXT.setdefault("fns", {})[fn_name] = fn
    if workers <= 1 or len(keys) <= 1:
        return {k: fn(k) for k in keys}
    with ProcessPoolExecutor(max_workers=min(workers, len(keys)),
                             mp_context=get_context("fork")) as pool:
        futures = [pool.submit(_call_job, fn_name, k) for k in keys]
        return dict(f.result() for f in futures)


# --- stages ---------------------------------------------------------------


def stage_synth(config: dict, out: Path) -> dict:
    started = time.time()
    synth_cfg = SynthConfig.from_dict({**config["synth"], "seed": derive_seed(config["seed"], "synth")})
    result = generate(synth_cfg)
    paths = write_synth(result, out / "synth")
    _write_manifest(out / "synth", "synth", config, started, list(paths.values()))
    return {str(k): str(v) for k, v in paths.items()}


def stage_ingest(config: dict, out: Path) -> Path:
    started = time.time()
    data = _require(_input_path(config, out, "data", out / "synth" / "data.csv"), "synth")
    meta = _input_path(config, out, "metadata", out / "synth" / "metadata.csv")
    ds = load_dataset(data, meta if meta.exists() else None)
    overrides_path = config.get("inputs", {}).get("kind_overrides")
    overrides = load_kind_overrides(overrides_path) if overrides_path else None
    ds = classify_dataset(ds, overrides)
    target = out / "ingest"
    target.mkdir(parents=True, exist_ok=True)
    save_dataset_npz(ds, target / "dataset.npz")
    _write_manifest(target, "ingest", config, started, [target / "dataset.npz"])
    return target / "dataset.npz"


def _load_ingested(config: dict, out: Path) -> Dataset:
    return load_dataset_npz(_require(out / "ingest" / "dataset.npz", "ingest"))


def _load_outcome_sets(config: dict, out: Path, row_ids: list[str]):
    outcomes_path = _require(_input_path(config, out, "outcomes", out / "synth" / "outcomes.csv"), "synth")
    truth_path = _input_path(config, out, "truth_outcomes", out / "synth" / "truth_outcomes.csv")
    observed = load_outcomes(outcomes_path, row_ids)
    truth = load_outcomes(truth_path, row_ids) if truth_path.exists() else None
    return observed, truth


def _load_splits(config: dict, out: Path, row_ids: list[str]) -> dict[str, np.ndarray]:
    path = _require(_input_path(config, out, "splits", out / "synth" / "splits.json"), "synth")
    raw = json.loads(Path(path).read_text())
    index = {r: i for i, r in enumerate(row_ids)}
    return {split: np.array([index[r] for r in ids], dtype=int) for split, ids in raw.items()}


def stage_preprocess(config: dict, out: Path) -> Path:
    started = time.time()
    ds = _load_ingested(config, out)
    outcomes, _ = _load_outcome_sets(config, out, ds.row_ids)
    mapping_path = _input_path(config, out, "composite_mapping", out / "synth" / "composite_mapping.json")
    mapping = json.loads(mapping_path.read_text()) if mapping_path.exists() else None
    enc, report = preprocess_pipeline(
        ds,
        train_mask=outcomes.observed,
        composite_mapping=mapping,
        variance_threshold=config["preprocess"]["variance_threshold"],
        max_missing_frac=config["preprocess"]["max_missing_frac"],
    )
    target = out / "preprocess"
    target.mkdir(parents=True, exist_ok=True)
    np.savez(
        target / "encoded.npz",
        values=enc.values,
        row_ids=np.asarray(enc.row_ids, dtype=str),
        columns_json=np.asarray(json.dumps([c.to_dict() for c in enc.columns])),
    )
    (target / "preprocess_report.json").write_text(json.dumps(report, indent=1))
    _write_manifest(target, "preprocess", config, started,
                    [target / "encoded.npz", target / "preprocess_report.json"])
    return target / "encoded.npz"


def load_encoded(out: Path) -> EncodedDataset:
    path = _require(out / "preprocess" / "encoded.npz", "preprocess")
    with np.load(path, allow_pickle=False) as archive:
        columns = [EncodedColumn.from_dict(d) for d in json.loads(str(archive["columns_json"]))]
        return EncodedDataset([str(r) for r in archive["row_ids"]], columns, archive["values"])


def stage_select(config: dict, out: Path) -> dict:
    started = time.time()
    enc = load_encoded(out)
    outcomes, _ = _load_outcome_sets(config, out, enc.row_ids)
    sel = config["select"]
    target = out / "select"
    target.mkdir(parents=True, exist_ok=True)
    artifacts = []

    scores = mi_score_table(enc, outcomes, bins=sel["mi_bins"])
    for k in sorted({sel["elastic_net_k"], sel["nested_rf_k"]}):
        per_outcome, union = select_top_k_mi(enc, outcomes, k=k, bins=sel["mi_bins"],
                                             score_table=scores)
        sets_path = target / f"mi_sets_k{k}.json"
        sets_path.write_text(json.dumps({n: fs.to_dict() for n, fs in per_outcome.items()}, indent=1))
        union_path = target / f"mi_union_k{k}.json"
        union_path.write_text(json.dumps(union, indent=1))
        artifacts += [sets_path, union_path]

    lasso_sets = {}
    for name in _selected_outcomes(config):
        fs = lasso_select(enc, outcomes.values[name], target_r2=sel["lasso_target_r2"],
                          train_mask=outcomes.observed, outcome_name=name)
        lasso_sets[name] = fs.to_dict()
    lasso_path_json = target / "lasso_sets.json"
    lasso_path_json.write_text(json.dumps(lasso_sets, indent=1))
    artifacts.append(lasso_path_json)

    _write_manifest(target, "select", config, started, artifacts)
    return {"dir": str(target)}


def _load_json(path: Path, producer: str):
    return json.loads(_require(path, producer).read_text())


def _model_dir(out: Path, model: str) -> Path:
    d = out / "models" / model
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_cv_tables(model_dir: Path, rows: list[dict]) -> None:
    """Audit CSV of every grid cell's fold losses and mean, per outcome."""
    if rows:
        pd.DataFrame(rows).to_csv(model_dir / "cv_table.csv", index=False)


def _cv_rows(outcome: str, table: list[dict]) -> list[dict]:
    rows = []
    for cell in table:
        params = cell.get("params", {k: cell[k] for k in cell if k not in
                                     ("fold_losses", "fold_mse", "mean_loss", "mean_mse")})
        rows.append({
            "outcome": outcome,
            "params": json.dumps(params, sort_keys=True),
            "fold_losses": json.dumps(cell.get("fold_losses", cell.get("fold_mse", []))),
            "mean_loss": cell.get("mean_loss", cell.get("mean_mse")),
        })
    return rows


def _write_predictions(out: Path, source: str, row_ids, predictions: dict) -> Path:
    pred_dir = out / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    pset = PredictionSet(source=source, row_ids=row_ids, predictions=predictions)
    path = pred_dir / f"{source.replace(':', '_')}.csv"
    pset.to_csv(path)
    return path


def _train_elastic_net(config: dict, out: Path) -> Path:
    enc = load_encoded(out)
    outcomes, _ = _load_outcome_sets(config, out, enc.row_ids)
    names = [n for n in _selected_outcomes(config) if n in CONTINUOUS_OUTCOMES]
    if not names:
        raise ValueError("elastic_net predicts continuous outcomes only; "
                         "config selects none of gpa/grit/material_hardship")
    sel_k = config["select"]["elastic_net_k"]
    union = _load_json(out / "select" / f"mi_union_k{sel_k}.json", "select")
    name_idx = enc.name_index()
    sub = enc.select_columns([name_idx[c] for c in union])
    sub = transform_features(sub, tuple(config["elastic_net"]["transforms"]),
                             train_mask=outcomes.observed)
    X = sub.values
    train = outcomes.observed
    en_cfg = config["elastic_net"]
    model_dir = _model_dir(out, "elastic_net")

    def train_one(name: str):
        y = outcomes.values[name][train]
        transform = en_cfg["outcome_transforms"].get(name)
        y_fit = transform_outcome_square(y) if transform == "square" else y
        model, chosen = fit_elastic_net_cv(
            X[train], y_fit, en_cfg["alpha_grid"], en_cfg["l1_ratio_grid"],
            folds=en_cfg["folds"], seed=derive_seed(config["seed"], "elastic_net", name),
            feature_names=sub.names(), tol=en_cfg.get("tol", 1e-5),
            max_iter=en_cfg.get("max_iter", 3000),
        )
        pred = model.predict(X)
        if transform == "square":
            pred = inverse_transform_outcome_square(pred)
        return {"model": model.to_dict(), "chosen": {k: v for k, v in chosen.items() if k != "cv_table"},
                "cv_table": chosen["cv_table"], "outcome_transform": transform,
                "pred": pred.tolist()}

    results = run_jobs("elastic_net", train_one, names, config["workers"])
    predictions = {}
    cv_rows = []
    for name in names:
        r = results[name]
        predictions[name] = np.asarray(r["pred"])
        cv_rows += _cv_rows(name, r["cv_table"])
        (model_dir / f"{name}.json").write_text(json.dumps(
            {k: r[k] for k in ("model", "chosen", "cv_table", "outcome_transform")}, indent=1))
    _write_cv_tables(model_dir, cv_rows)
    (model_dir / "model_info.json").write_text(json.dumps(
        {"source": "elastic_net", "outcomes": names, "n_features": X.shape[1]}, indent=1))
    return _write_predictions(out, "elastic_net", enc.row_ids, predictions)


def _train_nested_rf(config: dict, out: Path) -> Path:
    enc = load_encoded(out)
    outcomes, _ = _load_outcome_sets(config, out, enc.row_ids)
    names = _selected_outcomes(config)
    k = config["select"]["nested_rf_k"]
    mi_sets = _load_json(out / "select" / f"mi_sets_k{k}.json", "select")
    name_idx = enc.name_index()
    nested = config["nested_rf"]
    train = outcomes.observed
    model_dir = _model_dir(out, "nested_rf")

    def train_one(name: str):
        cols = [name_idx[c] for c in mi_sets[name]["selected"]]
        X_all = enc.values[:, cols]
        task = "classification" if name in BINARY_OUTCOMES else "regression"
        pred, records = nested_forest_ensemble(
            X_all[train], outcomes.values[name][train], GridSpec(dict(nested["grid"])),
            X_all=X_all, n_iterations=nested["n_iterations"],
            fractions=tuple(nested["fractions"]),
            seed=derive_seed(config["seed"], "nested_rf", name), task=task,
        )
        return {"records": records, "features": mi_sets[name]["selected"], "pred": pred.tolist()}

    results = run_jobs("nested_rf", train_one, names, config["workers"])
    predictions = {}
    for name in names:
        r = results[name]
        predictions[name] = np.clip(np.asarray(r["pred"]), 0, 1) if name in BINARY_OUTCOMES \
            else np.asarray(r["pred"])
        (model_dir / f"{name}.json").write_text(json.dumps(
            {"iterations": r["records"], "features": r["features"]}, indent=1))
    (model_dir / "model_info.json").write_text(json.dumps(
        {"source": "nested_rf", "outcomes": names,
         "note": "prediction set is the weighted nested-iteration combination"}, indent=1))
    return _write_predictions(out, "nested_rf", enc.row_ids, predictions)


def _train_lasso_rf(config: dict, out: Path) -> Path:
    enc = load_encoded(out)
    outcomes, _ = _load_outcome_sets(config, out, enc.row_ids)
    names = _selected_outcomes(config)
    lasso_sets = _load_json(out / "select" / "lasso_sets.json", "select")
    name_idx = enc.name_index()
    cfg = config["lasso_rf"]
    train = outcomes.observed
    model_dir = _model_dir(out, "lasso_rf")

    def train_one(name: str):
        selected = lasso_sets[name]["selected"]
        if not selected:
            raise ValueError(f"LASSO selected no features for outcome {name!r}; "
                             "lower select.lasso_target_r2 or inspect the data")
        cols = [name_idx[c] for c in selected]
        X_all = enc.values[:, cols]
        y = outcomes.values[name][train]
        seed = derive_seed(config["seed"], "lasso_rf", name)

        def fit_fn(Xf, yf, **params):
            return fit_random_forest(Xf, yf, task="regression", seed=seed, **params)

        loss_kind = "brier" if name in BINARY_OUTCOMES else "mse"
        model, cv = grid_search_cv(fit_fn, GridSpec(dict(cfg["grid"])), X_all[train], y,
                                   folds=cfg["folds"], seed=seed, loss_kind=loss_kind)
        pred = model.predict(X_all)
        return {"model": model.to_dict(), "cv": cv, "features": selected, "pred": pred.tolist()}

    results = run_jobs("lasso_rf", train_one, names, config["workers"])
    predictions = {}
    cv_rows = []
    for name in names:
        r = results[name]
        pred = np.asarray(r["pred"])
        predictions[name] = np.clip(pred, 0, 1) if name in BINARY_OUTCOMES else pred
        cv_rows += _cv_rows(name, r["cv"]["cv_table"])
        (model_dir / f"{name}.json").write_text(json.dumps(
            {"model": r["model"], "cv": r["cv"], "features": r["features"]}, indent=1))
    _write_cv_tables(model_dir, cv_rows)
    (model_dir / "model_info.json").write_text(json.dumps(
        {"source": "lasso_rf", "outcomes": names}, indent=1))
    return _write_predictions(out, "lasso_rf", enc.row_ids, predictions)


def _gbt_feature_indices(enc: EncodedDataset) -> list[int]:
    # full encoded matrix minus the composite columns (added for the other
    # models; the boosted trees trained on the plain encoded features)
    return [j for j, c in enumerate(enc.columns) if c.role != "composite"]


def _train_gbt(config: dict, out: Path) -> Path:
    enc = load_encoded(out)
    outcomes, _ = _load_outcome_sets(config, out, enc.row_ids)
    names = _selected_outcomes(config)
    cols = _gbt_feature_indices(enc)
    X_all = np.ascontiguousarray(enc.values[:, cols])
    feature_names = [enc.columns[j].name for j in cols]
    binner = FeatureBinner.fit(X_all)
    codes_all = binner.transform(X_all)
    train = outcomes.observed
    train_idx = np.flatnonzero(train)
    X_train = X_all[train_idx]
    codes_train = np.ascontiguousarray(codes_all[train_idx])
    gbt_cfg = config["gbt"]
    model_dir = _model_dir(out, "gbt")

    def train_one(name: str):
        y = outcomes.values[name][train]
        loss = "logistic" if name in BINARY_OUTCOMES else "squared"
        seed = derive_seed(config["seed"], "gbt", name)
        grid = GridSpec({k: list(v) for k, v in gbt_cfg["grids"][name].items()})
        cells = grid.cells()
        if len(cells) == 1:
            # nothing to select; skip the fold evaluation and fit directly
            model = fit_gbt(X_train, y, loss=loss, seed=seed, binner=binner,
                            codes=codes_train, **cells[0])
            cv = {"best_params": cells[0], "cv_table": [], "note": "singleton grid, no fold search"}
        else:
            def fit_fn(Xf, yf, **params):
                return fit_gbt(Xf, yf, loss=loss, seed=seed, binner=binner, **params)

            loss_kind = "brier" if name in BINARY_OUTCOMES else "mse"
            model, cv = grid_search_cv(fit_fn, grid, X_train, y, folds=gbt_cfg["folds"],
                                       seed=seed, loss_kind=loss_kind)
        pred = model.predict(X_all)
        return {"model": model.to_dict(), "cv": cv, "pred": pred.tolist()}

    results = run_jobs("gbt", train_one, names, config["workers"])
    predictions = {}
    cv_rows = []
    for name in names:
        r = results[name]
        predictions[name] = np.asarray(r["pred"])
        cv_rows += _cv_rows(name, r["cv"].get("cv_table", []))
        (model_dir / f"{name}.json").write_text(json.dumps({"model": r["model"], "cv": r["cv"]}, indent=1))
    _write_cv_tables(model_dir, cv_rows)
    (model_dir / "model_info.json").write_text(json.dumps(
        {"source": "gbt", "outcomes": names, "feature_names": feature_names}, indent=1))
    return _write_predictions(out, "gbt", enc.row_ids, predictions)


_TRAINERS = {
    "elastic_net": _train_elastic_net,
    "nested_rf": _train_nested_rf,
    "lasso_rf": _train_lasso_rf,
    "gbt": _train_gbt,
}


def stage_train(config: dict, out: Path, model: str) -> Path:
    if model not in _TRAINERS:
        raise ValueError(f"unknown model {model!r}; choose from {INDIVIDUAL_MODELS}")
    started = time.time()
    path = _TRAINERS[model](config, out)
    _write_manifest(out / "models" / model, f"train {model}", config, started, [path])
    return path


def stage_predict(config: dict, out: Path) -> list[Path]:
    """Regenerate prediction CSVs from stored model artifacts.

    The nested forest's artifact is its weighted prediction set, so its
    CSV is validated rather than recomputed.
    """
    started = time.time()
    enc = load_encoded(out)
    outcomes, _ = _load_outcome_sets(config, out, enc.row_ids)
    written = []
    for model in INDIVIDUAL_MODELS:
        info_path = out / "models" / model / "model_info.json"
        if not info_path.exists():
            continue
        info = json.loads(info_path.read_text())
        if model == "nested_rf":
            _require(out / "predictions" / "nested_rf.csv", "train nested_rf")
            written.append(out / "predictions" / "nested_rf.csv")
            continue
        predictions = {}
        for name in info["outcomes"]:
            payload = json.loads((out / "models" / model / f"{name}.json").read_text())
            if model == "elastic_net":
                sel_k = config["select"]["elastic_net_k"]
                union = _load_json(out / "select" / f"mi_union_k{sel_k}.json", "select")
                sub = enc.select_columns([enc.name_index()[c] for c in union])
                sub = transform_features(sub, tuple(config["elastic_net"]["transforms"]),
                                         train_mask=outcomes.observed)
                pred = LinearModel.from_dict(payload["model"]).predict(sub.values)
                if payload.get("outcome_transform") == "square":
                    pred = inverse_transform_outcome_square(pred)
            elif model == "lasso_rf":
                cols = [enc.name_index()[c] for c in payload["features"]]
                pred = ForestModel.from_dict(payload["model"]).predict(enc.values[:, cols])
                if name in BINARY_OUTCOMES:
                    pred = np.clip(pred, 0, 1)
            else:  # gbt
                cols = _gbt_feature_indices(enc)
                pred = GbtModel.from_dict(payload["model"]).predict(enc.values[:, cols])
            predictions[name] = pred
        written.append(_write_predictions(out, model, enc.row_ids, predictions))
    if not written:
        raise StageInputError(f"missing expected artifact {out / 'models'}; run `surveycast train <model>` first")
    _write_manifest(out / "predictions", "predict", config, started, written)
    return written


def _load_prediction_sets(out: Path, sources=INDIVIDUAL_MODELS) -> list[PredictionSet]:
    sets = []
    for source in sources:
        path = _require(out / "predictions" / f"{source}.csv", f"train {source}")
        sets.append(PredictionSet.from_csv(path, source))
    return sets


def _leaderboard_ranks(config: dict, out: Path, preds: list[PredictionSet]):
    enc_row_ids = preds[0].row_ids
    outcomes, truth = _load_outcome_sets(config, out, enc_row_ids)
    if truth is None:
        raise StageInputError("missing truth outcomes file; the weighted ensemble needs "
                              "leaderboard scores")
    splits = _load_splits(config, out, enc_row_ids)
    lead = splits["leaderboard"]
    from .evaluate import baseline_loss, loss_for

    base = baseline_loss(outcomes, truth, lead)
    scores: dict[str, dict[str, float]] = {}
    for pred in preds:
        for name in pred.outcomes():
            loss = loss_for(OutcomeSet.kind_of(name), pred.predictions[name][lead],
                            truth.values[name][lead])
            scores.setdefault(name, {})[pred.source] = relative_improvement(loss, base[name])
    return ranks_from_scores(scores), scores


def stage_ensemble(config: dict, out: Path, scheme: str) -> Path:
    if scheme not in ENSEMBLE_SCHEMES:
        raise ValueError(f"unknown ensemble scheme {scheme!r}; choose from {ENSEMBLE_SCHEMES}")
    started = time.time()
    preds = _load_prediction_sets(out)
    info: dict = {"scheme": scheme}
    if scheme == "simple":
        combined = simple_average(preds)
    elif scheme == "weighted":
        ranks, scores = _leaderboard_ranks(config, out, preds)
        combined = weighted_average(preds, ranks)
        info.update(ranks=ranks, leaderboard_scores=scores)
    else:
        outcomes, _ = _load_outcome_sets(config, out, preds[0].row_ids)
        method = scheme.split("-")[1]
        combined = stack(preds, outcomes, method=method,
                         folds=config["ensemble"]["stack_folds"],
                         seed=derive_seed(config["seed"], "ensemble", scheme))
    path = _write_predictions(out, combined.source, combined.row_ids, combined.predictions)
    (out / "predictions" / f"{combined.source.replace(':', '_')}_info.json").write_text(
        json.dumps(info, indent=1))
    _write_manifest(out / "predictions", f"ensemble {scheme}", config, started, [path])
    return path


def _all_sources(out: Path) -> list[str]:
    names = list(INDIVIDUAL_MODELS) + [f"ensemble:{s.replace('-', '_')}" for s in ENSEMBLE_SCHEMES]
    present = []
    for source in names:
        if (out / "predictions" / f"{source.replace(':', '_')}.csv").exists():
            present.append(source)
    return present


def stage_evaluate(config: dict, out: Path) -> Path:
    started = time.time()
    sources = _all_sources(out)
    if not sources:
        raise StageInputError(f"missing expected artifact {out / 'predictions' / 'gbt.csv'} "
                              "(no prediction CSVs found); run `surveycast train <model>` first")
    preds = [PredictionSet.from_csv(out / "predictions" / f"{s.replace(':', '_')}.csv", s)
             for s in sources]
    outcomes, truth = _load_outcome_sets(config, out, preds[0].row_ids)
    if truth is None:
        raise StageInputError("missing truth outcomes file; evaluation needs held-out truth")
    splits = _load_splits(config, out, preds[0].row_ids)
    report = evaluate_predictions(preds, outcomes, truth, splits)

    target = out / "evaluate"
    target.mkdir(parents=True, exist_ok=True)
    (target / "eval_report.json").write_text(json.dumps(report, indent=1))

    rows = []
    scatter = []
    for rec in report["records"]:
        for split, loss in rec["losses"].items():
            rows.append({"model": rec["model"], "outcome": rec["outcome"], "split": split,
                         "loss": loss, "baseline": report["baselines"][split][rec["outcome"]],
                         "relative_improvement": rec["scores"][split]})
        scatter.append({"model": rec["model"], "outcome": rec["outcome"],
                        "train_score": rec["scores"].get("train"),
                        "leaderboard_score": rec["scores"].get("leaderboard"),
                        "holdout_score": rec["scores"].get("holdout")})
    pd.DataFrame(rows).to_csv(target / "scores.csv", index=False)
    pd.DataFrame(scatter).to_csv(target / "scatter.csv", index=False)
    _write_manifest(target, "evaluate", config, started,
                    [target / "eval_report.json", target / "scores.csv", target / "scatter.csv"])
    return target / "eval_report.json"


def stage_report(config: dict, out: Path) -> Path:
    started = time.time()
    enc = load_encoded(out)
    outcomes, _ = _load_outcome_sets(config, out, enc.row_ids)
    ds = _load_ingested(config, out)
    questions = {c.code: c.question for c in ds.columns}
    target = out / "report"
    target.mkdir(parents=True, exist_ok=True)
    artifacts = []
    rep_cfg = config["report"]

    gbt_dir = out / "models" / "gbt"
    if gbt_dir.exists():
        cols = _gbt_feature_indices(enc)
        gbt_columns = [enc.columns[j] for j in cols]
        table_rows, agg_rows = [], []
        for name in _selected_outcomes(config):
            path = gbt_dir / f"{name}.json"
            if not path.exists():
                continue
            model = GbtModel.from_dict(json.loads(path.read_text())["model"])
            imp = feature_importance(model)
            for row in importance_table(imp, gbt_columns, questions, top_n=rep_cfg["top_n"]):
                table_rows.append({"outcome": name, **row})
            for by in ("wave", "respondent"):
                for category, value in sorted(aggregate_importance(imp, gbt_columns, by=by).items()):
                    agg_rows.append({"outcome": name, "by": by, "category": category,
                                     "importance": value})
        if table_rows:
            pd.DataFrame(table_rows).to_csv(target / "importance_top.csv", index=False)
            pd.DataFrame(agg_rows).to_csv(target / "importance_aggregated.csv", index=False)
            artifacts += [target / "importance_top.csv", target / "importance_aggregated.csv"]

    comparison = selection_comparison(enc, outcomes, k_values=rep_cfg["k_values"],
                                      r2_values=rep_cfg["r2_values"],
                                      bins=config["select"]["mi_bins"])
    pd.DataFrame(comparison).to_csv(target / "selection_comparison.csv", index=False)
    artifacts.append(target / "selection_comparison.csv")

    if rep_cfg.get("svg"):
        artifacts += _emit_svgs(out, target)
    _write_manifest(target, "report", config, started, artifacts)
    return target


def _emit_svgs(out: Path, target: Path) -> list[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping SVG plots")
        return []
    written = []
    scatter_path = out / "evaluate" / "scatter.csv"
    if scatter_path.exists():
        df = pd.read_csv(scatter_path)
        fig, ax = plt.subplots(figsize=(6, 6))
        for name, group in df.groupby("outcome"):
            ax.scatter(group["leaderboard_score"], group["holdout_score"], label=name, s=18)
        lim = (-0.3, 0.5)
        ax.plot(lim, lim, color="grey", lw=0.5)
        ax.set_xlim(lim)
        ax.set_ylim(lim)
        ax.set_xlabel("leaderboard relative improvement")
        ax.set_ylabel("holdout relative improvement")
        ax.legend(fontsize=7)
        fig.savefig(target / "leaderboard_vs_holdout.svg")
        plt.close(fig)
        written.append(target / "leaderboard_vs_holdout.svg")
    comp_path = target / "selection_comparison.csv"
    if comp_path.exists():
        df = pd.read_csv(comp_path)
        pooled = df[df["outcome"] == "all"]
        grid = pooled.pivot(index="k", columns="r2_cutoff", values="jaccard")
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(grid.to_numpy(), vmin=0, vmax=1, aspect="auto", origin="lower")
        ax.set_xticks(range(len(grid.columns)), [f"{c:g}" for c in grid.columns])
        ax.set_yticks(range(len(grid.index)), [f"{i:g}" for i in grid.index])
        ax.set_xlabel("lasso r2 cutoff")
        ax.set_ylabel("mutual-information K")
        fig.colorbar(im, ax=ax, label="jaccard")
        fig.savefig(target / "selection_overlap.svg")
        plt.close(fig)
        written.append(target / "selection_overlap.svg")
    return written


def run_all(config: dict, out: Path) -> dict:
    """synth through report; returns the paths of the main artifacts."""
    started = time.time()
    artifacts: dict = {}
    artifacts["synth"] = stage_synth(config, out)
    artifacts["ingest"] = str(stage_ingest(config, out))
    artifacts["preprocess"] = str(stage_preprocess(config, out))
    artifacts["select"] = stage_select(config, out)
    for model in INDIVIDUAL_MODELS:
        artifacts[f"train_{model}"] = str(stage_train(config, out, model))
    for scheme in ENSEMBLE_SCHEMES:
        artifacts[f"ensemble_{scheme}"] = str(stage_ensemble(config, out, scheme))
    artifacts["evaluate"] = str(stage_evaluate(config, out))
    artifacts["report"] = str(stage_report(config, out))
    _write_manifest(out, "all", config, started, list(artifacts.values()))
    return artifacts
