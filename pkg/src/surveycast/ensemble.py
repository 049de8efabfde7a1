"""Combining individual prediction sets: simple average, leaderboard-rank
weighted average, and linear/logistic or forest stacking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .ingest import BINARY_OUTCOMES, ID_COLUMN, OUTCOME_CSV_COLUMNS, OUTCOME_NAMES, OutcomeSet

log = logging.getLogger(__name__)

ELASTIC_NET_SOURCE = "elastic_net"
RANK_CUTOFF = 30
TOP_THREE_WEIGHTS = (1 / 2, 1 / 3, 1 / 6)
PROB_CLIP = 1e-6


@dataclass
class PredictionSet:
    """Per-outcome predictions over all rows from one source.

    Sources that skip an outcome (the elastic net predicts continuous
    outcomes only) simply omit it from ``predictions``.
    """

    source: str
    row_ids: list[str]
    predictions: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.row_ids)
        for name, v in self.predictions.items():
            if name not in OUTCOME_NAMES:
                raise ValueError(f"unknown outcome {name!r}")
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (n,):
                raise ValueError(f"{self.source}/{name}: {v.size} predictions for {n} rows")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{self.source}/{name}: non-finite predictions")
            if name in BINARY_OUTCOMES and (v.min() < 0 or v.max() > 1):
                raise ValueError(f"{self.source}/{name}: probabilities outside [0, 1]")
            self.predictions[name] = v

    def outcomes(self) -> list[str]:
        return [n for n in OUTCOME_NAMES if n in self.predictions]

    def to_csv(self, path) -> None:
        data = {ID_COLUMN: self.row_ids}
        for name in OUTCOME_NAMES:
            col = OUTCOME_CSV_COLUMNS[name]
            data[col] = self.predictions.get(name, np.full(len(self.row_ids), np.nan))
        pd.DataFrame(data).to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path, source: str) -> "PredictionSet":
        df = pd.read_csv(path, dtype={ID_COLUMN: str})
        preds = {}
        for name in OUTCOME_NAMES:
            col = df[OUTCOME_CSV_COLUMNS[name]].to_numpy(dtype=np.float64)
            if np.all(np.isfinite(col)):
                preds[name] = col
        return cls(source=source, row_ids=df[ID_COLUMN].tolist(), predictions=preds)


def _check_aligned(preds: list[PredictionSet]) -> list[str]:
    if not preds:
        raise ValueError("need at least one prediction set")
    row_ids = preds[0].row_ids
    for p in preds[1:]:
        if p.row_ids != row_ids:
            raise ValueError(f"row ids of {p.source} differ from {preds[0].source}")
    return row_ids


def simple_average(preds: list[PredictionSet]) -> PredictionSet:
    """Elementwise mean per outcome; the elastic net is left out of the
    binary outcomes."""
    row_ids = _check_aligned(preds)
    out = {}
    for name in OUTCOME_NAMES:
        present = [p for p in preds if name in p.predictions]
        if not present:
            continue
        sources = present
        if name in BINARY_OUTCOMES:
            sources = [p for p in sources if p.source != ELASTIC_NET_SOURCE]
        if not sources:
            raise ValueError(f"no usable inputs for outcome {name!r}")
        out[name] = np.mean([p.predictions[name] for p in sources], axis=0)
    return PredictionSet(source="ensemble:simple", row_ids=row_ids, predictions=out)


def weighted_average(preds: list[PredictionSet], ranks: dict[str, dict[str, int]]) -> PredictionSet:
    """Rank-weighted average: the top three surviving sources per outcome
    get weights [1/2, 1/3, 1/6].

    Sources ranked worse than 30 are dropped; with fewer than three
    survivors the weight vector is truncated and renormalized to sum 1.
    """
    row_ids = _check_aligned(preds)
    out = {}
    for name in OUTCOME_NAMES:
        if not any(name in p.predictions for p in preds):
            continue
        outcome_ranks = ranks.get(name, {})
        entries = [(outcome_ranks[p.source], p) for p in preds
                   if name in p.predictions and p.source in outcome_ranks]
        rank_values = [r for r, _ in entries]
        if len(set(rank_values)) != len(rank_values):
            raise ValueError(f"ranks for outcome {name!r} must be distinct")
        survivors = sorted(((r, p) for r, p in entries if r <= RANK_CUTOFF), key=lambda e: e[0])
        if not survivors:
            raise ValueError(f"no sources survive the rank cutoff for outcome {name!r}")
        survivors = survivors[: len(TOP_THREE_WEIGHTS)]
        weights = np.array(TOP_THREE_WEIGHTS[: len(survivors)])
        if len(survivors) < len(TOP_THREE_WEIGHTS):
            weights = weights / weights.sum()
        out[name] = sum(w * p.predictions[name] for w, (_, p) in zip(weights, survivors))
    return PredictionSet(source="ensemble:weighted", row_ids=row_ids, predictions=out)


def ranks_from_scores(scores: dict[str, dict[str, float]], higher_is_better=True) -> dict[str, dict[str, int]]:
    """Leaderboard-style ranks (1 = best) from per-outcome model scores;
    ties broken by source label."""
    table = {}
    for name, by_source in scores.items():
        order = sorted(by_source, key=lambda s: (-by_source[s] if higher_is_better else by_source[s], s))
        table[name] = {source: i + 1 for i, source in enumerate(order)}
    return table


def stack(preds: list[PredictionSet], outcomes: OutcomeSet, method: str = "linear",
          folds: int = 3, seed: int = 0) -> PredictionSet:
    """Meta-model combination fitted on training rows.

    ``method="linear"`` uses linear regression for continuous outcomes and
    L2 logistic regression for binary ones; ``method="forest"`` uses a
    forest regressor/classifier.  Meta hyperparameters are picked by
    k-fold cross-validation; binary outputs are clipped to
    [1e-6, 1 - 1e-6].
    """
    from .linear import fit_elastic_net_cv, fit_logistic
    from .trees import fit_random_forest
    from .tuning import GridSpec, grid_search_cv

    if method not in ("linear", "forest"):
        raise ValueError(f"unknown stacking method {method!r}")
    if len(preds) < 2:
        raise ValueError("stacking needs at least 2 prediction sets")
    row_ids = _check_aligned(preds)
    train = outcomes.observed

    out = {}
    for name in OUTCOME_NAMES:
        inputs = sorted((p for p in preds if name in p.predictions), key=lambda p: p.source)
        if not inputs:
            continue
        F = np.column_stack([p.predictions[name] for p in inputs])
        y = outcomes.values[name][train]
        binary = name in BINARY_OUTCOMES
        if np.all(y == y[0]):
            log.warning("outcome %s constant on training rows; stacking a constant", name)
            pred = np.full(len(row_ids), float(y[0]))
        elif method == "linear":
            if binary:
                def fit_fn(Xf, yf, l2_penalty):
                    return fit_logistic(Xf, yf, l2_penalty=l2_penalty)

                model, _ = grid_search_cv(fit_fn, GridSpec({"l2_penalty": [1e-4, 1e-2, 1.0]}),
                                          F[train], y, folds=folds, seed=seed, loss_kind="brier")
            else:
                model, _ = fit_elastic_net_cv(F[train], y, alpha_grid=[1e-6, 1e-3, 1e-1],
                                              l1_ratio_grid=[0.0], folds=folds, seed=seed)
            pred = model.predict(F)
        else:
            task = "classification" if binary else "regression"

            def fit_fn(Xf, yf, min_samples_leaf, task=task):
                return fit_random_forest(Xf, yf, n_estimators=50, max_features=1.0,
                                         min_samples_leaf=min_samples_leaf, task=task, seed=seed)

            model, _ = grid_search_cv(fit_fn, GridSpec({"min_samples_leaf": [5, 25]}),
                                      F[train], y, folds=folds, seed=seed,
                                      loss_kind="brier" if binary else "mse")
            pred = model.predict(F)
        if binary:
            pred = np.clip(pred, PROB_CLIP, 1 - PROB_CLIP)
        out[name] = pred
    return PredictionSet(source=f"ensemble:stack_{method}", row_ids=row_ids, predictions=out)
