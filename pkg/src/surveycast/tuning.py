"""Data splitting, k-fold cross-validation, exhaustive grid search, and the
nested train/validation/test forest ensemble.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

TRAIN, VALIDATION, TEST = 0, 1, 2


@dataclass
class SplitPlan:
    """Disjoint, exhaustive fold assignment over training rows."""

    assignments: np.ndarray
    scheme: str  # "kfold:<k>" | "nested:<train>/<val>/<test>"
    seed: int

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def n_folds(self) -> int:
        return int(self.assignments.max()) + 1

    def validate(self) -> None:
        counts = np.bincount(self.assignments)
        if counts.sum() != self.assignments.size or (counts == 0).any():
            raise AssertionError("split plan must cover all rows with nonempty folds")

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "seed": self.seed, "assignments": self.assignments.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(np.asarray(d["assignments"], dtype=np.int64), d["scheme"], d["seed"])


def kfold(n_rows: int, k: int, seed: int) -> SplitPlan:
    """Shuffled disjoint folds of size floor(n/k) or ceil(n/k)."""
    if not 2 <= k <= n_rows:
        raise ValueError(f"k must be in [2, {n_rows}], got {k}")
    perm = np.random.default_rng(seed).permutation(n_rows)
    assignments = np.empty(n_rows, dtype=np.int64)
    for fold, chunk in enumerate(np.array_split(perm, k)):
        assignments[chunk] = fold
    plan = SplitPlan(assignments, f"kfold:{k}", seed)
    plan.validate()
    return plan


def nested_split(n_rows: int, fractions, seed) -> SplitPlan:
    """One shuffled train/validation/test partition."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError("fractions must be three positive numbers summing to 1")
    perm = np.random.default_rng(seed).permutation(n_rows)
    n_train = int(round(fractions[0] * n_rows))
    n_val = int(round(fractions[1] * n_rows))
    n_train = max(1, min(n_train, n_rows - 2))
    n_val = max(1, min(n_val, n_rows - n_train - 1))
    assignments = np.empty(n_rows, dtype=np.int64)
    assignments[perm[:n_train]] = TRAIN
    assignments[perm[n_train:n_train + n_val]] = VALIDATION
    assignments[perm[n_train + n_val:]] = TEST
    plan = SplitPlan(assignments, f"nested:{fractions[0]:g}/{fractions[1]:g}/{fractions[2]:g}",
                     seed if np.isscalar(seed) else int(np.asarray(seed)[-1]))
    plan.validate()
    return plan


@dataclass
class GridSpec:
    """Named parameter lists; the grid is their full Cartesian product."""

    params: dict[str, list] = field(default_factory=dict)

    def __post_init__(self):
        if not self.params or any(len(v) == 0 for v in self.params.values()):
            raise ValueError("grid must be nonempty")

    def cells(self) -> list[dict]:
        keys = list(self.params)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.params[k] for k in keys))]

    def to_dict(self) -> dict:
        return dict(self.params)


def _loss(pred: np.ndarray, truth: np.ndarray, loss_kind: str) -> float:
    if loss_kind == "brier":
        if np.any((pred < 0) | (pred > 1)):
            raise ValueError("brier loss needs probabilities in [0, 1]")
    return float(np.mean((pred - truth) ** 2))


def grid_search_cv(fit_fn, grid: GridSpec, X, y, folds: int, seed: int,
                   loss_kind: str = "mse"):
    """Exhaustive k-fold search; returns (refit model, result dict).

    Every cell is scored by mean validation loss (MSE for continuous
    targets, Brier for probabilities -- same formula); the argmin wins
    with ties broken by first-in-grid order, then is refit on all rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    plan = kfold(y.size, folds, seed)
    cells = grid.cells()
    table = []
    failures = []
    for cell in cells:
        fold_losses = []
        error = None
        for f in range(folds):
            va = plan.fold_indices(f)
            tr = np.setdiff1d(np.arange(y.size), va)
            try:
                model = fit_fn(X[tr], y[tr], **cell)
                fold_losses.append(_loss(model.predict(X[va]), y[va], loss_kind))
            except Exception as exc:  # collected for diagnostics
                error = f"fold {f}: {exc}"
                break
        if error is None:
            table.append({"params": cell, "fold_losses": fold_losses,
                          "mean_loss": float(np.mean(fold_losses))})
        else:
            failures.append({"params": cell, "error": error})
            table.append({"params": cell, "fold_losses": [], "mean_loss": float("inf")})
    if len(failures) == len(cells):
        raise RuntimeError(f"all grid cells failed: {failures}")

    best_idx = min(range(len(table)), key=lambda i: table[i]["mean_loss"])
    best = table[best_idx]
    model = fit_fn(X, y, **best["params"])
    return model, {"best_params": best["params"], "best_mean_loss": best["mean_loss"],
                   "cv_table": table, "failures": failures, "seed": seed, "folds": folds}


def inverse_loss_weights(losses) -> np.ndarray:
    """Normalized 1/loss weights; zero losses capped at 100x the median weight."""
    losses = np.asarray(losses, dtype=np.float64)
    if np.any(losses < 0):
        raise ValueError("losses must be nonnegative")
    finite = losses > 0
    if not finite.any():
        log.warning("all iterations had zero test loss; falling back to uniform weights")
        w = np.ones_like(losses)
    else:
        w = np.zeros_like(losses)
        w[finite] = 1.0 / losses[finite]
        if (~finite).any():
            cap = 100.0 * float(np.median(w[finite]))
            log.warning("%d iteration(s) with zero test loss; weight capped at 100x median",
                        int((~finite).sum()))
            w[~finite] = cap
    return w / w.sum()


def nested_forest_ensemble(X, y, grid: GridSpec, X_all=None, n_iterations: int = 50,
                           fractions=(0.6, 0.2, 0.2), seed: int = 0,
                           task: str = "regression", fit_fn=None):
    """Repeated train/validation/test forests, averaged by test performance.

    Each iteration draws a fresh three-way split, fits one forest per grid
    cell on the train part, picks the cell with the best validation loss,
    and records that forest's test loss.  The returned prediction over
    ``X_all`` (default: X) is the inverse-test-loss weighted combination
    of the per-iteration predictions.
    """
    from .trees import fit_random_forest

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    if X_all is None:
        X_all = X
    if fit_fn is None:
        fit_fn = fit_random_forest
    loss_kind = "brier" if task == "classification" else "mse"

    preds = np.zeros((n_iterations, X_all.shape[0]))
    records = []
    for i in range(n_iterations):
        plan = nested_split(y.size, fractions, [seed, i])
        tr = plan.fold_indices(TRAIN)
        va = plan.fold_indices(VALIDATION)
        te = plan.fold_indices(TEST)
        if set(te.tolist()) & (set(tr.tolist()) | set(va.tolist())):
            raise AssertionError("nested split leaked test rows")

        iter_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0] % (2**31))
        best_loss, best_model, best_cell = np.inf, None, None
        for cell in grid.cells():
            model = fit_fn(X[tr], y[tr], task=task, seed=iter_seed, **cell)
            val_loss = _loss(model.predict(X[va]), y[va], loss_kind)
            if val_loss < best_loss:
                best_loss, best_model, best_cell = val_loss, model, cell
        test_loss = _loss(best_model.predict(X[te]), y[te], loss_kind)
        preds[i] = best_model.predict(X_all)
        records.append({"iteration": i, "params": best_cell,
                        "validation_loss": best_loss, "test_loss": test_loss})

    weights = inverse_loss_weights([r["test_loss"] for r in records])
    for r, w in zip(records, weights):
        r["weight"] = float(w)
    return weights @ preds, records
