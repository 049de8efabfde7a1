"""Losses, mean baselines, relative accuracy improvement, split-score
correlations, and importance aggregation by wave/respondent.
"""

from __future__ import annotations

import logging

import numpy as np

from .ingest import OUTCOME_NAMES, OutcomeSet, parse_wave_respondent
from .preprocess import EncodedColumn

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "leaderboard", "holdout")


def mse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.size == 0 or pred.shape != truth.shape:
        raise ValueError("predictions and truth must be nonempty and aligned")
    return float(np.mean((pred - truth) ** 2))


def brier(pred, truth) -> float:
    """Mean squared difference between predicted probability and 0/1 truth."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.size and (pred.min() < 0 or pred.max() > 1):
        raise ValueError("brier needs probabilities in [0, 1]")
    return mse(pred, truth)


def loss_for(kind: str, pred, truth) -> float:
    return brier(pred, truth) if kind == "binary" else mse(pred, truth)


def baseline_loss(outcomes: OutcomeSet, truth: OutcomeSet, split_rows) -> dict[str, float]:
    """Loss of the constant training-mean prediction on the given rows."""
    split_rows = np.asarray(split_rows, dtype=int)
    if not outcomes.observed.any():
        raise ValueError("no training rows to define the baseline")
    out = {}
    for name in OUTCOME_NAMES:
        constant = float(np.mean(outcomes.observed_values(name)))
        target = truth.values[name][split_rows]
        out[name] = loss_for(OutcomeSet.kind_of(name), np.full(split_rows.size, constant), target)
    return out


def relative_improvement(loss: float, baseline: float) -> float:
    """(baseline - loss) / baseline; negative when worse than the baseline."""
    if baseline <= 0:
        raise ValueError("degenerate baseline")
    return (baseline - loss) / baseline


def split_correlations(records: list[dict], split_a: str = "leaderboard",
                       split_b: str = "holdout") -> dict:
    """Pearson correlation of (split_a, split_b) score pairs across models.

    ``records`` rows carry {"model", "outcome", "scores": {split: value}}.
    Returns per-outcome correlations plus the pooled correlation over all
    (model, outcome) pairs; zero-variance coordinates make a correlation
    undefined, reported as None.
    """
    def corr(pairs):
        if len(pairs) < 2:
            return None
        a, b = np.array(pairs).T
        if a.std() == 0 or b.std() == 0:
            return None
        return float(np.corrcoef(a, b)[0, 1])

    per_outcome = {}
    pooled = []
    for name in OUTCOME_NAMES:
        pairs = [(r["scores"][split_a], r["scores"][split_b])
                 for r in records if r["outcome"] == name
                 and split_a in r["scores"] and split_b in r["scores"]]
        per_outcome[name] = corr(pairs)
        pooled.extend(pairs)
    return {"per_outcome": per_outcome, "overall": corr(pooled),
            "split_a": split_a, "split_b": split_b}


def evaluate_predictions(pred_sets, outcomes: OutcomeSet, truth: OutcomeSet,
                         splits: dict[str, np.ndarray]) -> dict:
    """Per (model, outcome, split) losses and relative improvements.

    ``splits`` maps split name to row indices; the baseline is always the
    training-mean constant.  Returns the full score table plus
    leaderboard-vs-holdout and in-sample correlation summaries.
    """
    baselines = {split: baseline_loss(outcomes, truth, rows) for split, rows in splits.items()}
    records = []
    for pred in pred_sets:
        for name in pred.outcomes():
            scores = {}
            losses = {}
            for split, rows in splits.items():
                rows = np.asarray(rows, dtype=int)
                loss = loss_for(OutcomeSet.kind_of(name),
                                pred.predictions[name][rows], truth.values[name][rows])
                losses[split] = loss
                scores[split] = relative_improvement(loss, baselines[split][name])
            records.append({"model": pred.source, "outcome": name,
                            "losses": losses, "scores": scores})
    report = {
        "records": records,
        "baselines": baselines,
        "correlations": {
            "leaderboard_vs_holdout": split_correlations(records, "leaderboard", "holdout"),
            "train_vs_leaderboard": split_correlations(records, "train", "leaderboard"),
            "train_vs_holdout": split_correlations(records, "train", "holdout"),
        },
    }
    return report


def aggregate_importance(importance: np.ndarray, columns: list[EncodedColumn],
                         by: str = "respondent") -> dict[str, float]:
    """Sum importance over encoded columns grouped by source wave/respondent.

    Derived columns (one-hot, flags, transforms) inherit their source
    code's category; composites and unparsable codes land in "unknown".
    Category sums preserve the vector total.
    """
    if by not in ("wave", "respondent"):
        raise ValueError("by must be 'wave' or 'respondent'")
    importance = np.asarray(importance, dtype=np.float64)
    if importance.size != len(columns):
        raise ValueError(f"{importance.size} importances for {len(columns)} columns")
    out: dict[str, float] = {}
    for imp, col in zip(importance, columns):
        wave, resp = parse_wave_respondent(col.source) if col.source else (None, None)
        if by == "wave":
            key = str(wave) if wave is not None else "unknown"
        else:
            key = resp.value if resp is not None else "unknown"
        out[key] = out.get(key, 0.0) + float(imp)
    return out


def describe_column(col: EncodedColumn, questions: dict[str, str]) -> str:
    question = questions.get(col.source, "")
    if col.role == "onehot":
        return f'Value "{col.detail}" for: {question}'
    if col.role == "transform":
        return f"{col.detail} of: {question}"
    if col.role == "flag_refused":
        return f"Refused: {question}"
    if col.role == "flag_dont_know":
        return f"Did not know: {question}"
    if col.role == "composite":
        return "Composite housing-instability feature"
    return question


def importance_table(importance: np.ndarray, columns: list[EncodedColumn],
                     questions: dict[str, str] | None = None, top_n: int = 10) -> list[dict]:
    """Top-n rows of (code, importance, description), ties by ascending code."""
    questions = questions or {}
    order = sorted(range(len(columns)), key=lambda j: (-importance[j], columns[j].name))
    rows = []
    for j in order[:top_n]:
        rows.append({
            "code": columns[j].name,
            "importance": float(importance[j]),
            "description": describe_column(columns[j], questions),
        })
    return rows
