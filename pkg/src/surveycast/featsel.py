"""Feature selection: per-outcome top-K mutual information and LASSO
support extraction targeting a fixed in-sample r², plus the set-overlap
analytics (Jaccard, first-principal-component correlation) used to
compare the two methods.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ingest import OUTCOME_NAMES, OutcomeSet
from .preprocess import EncodedDataset
from .linear import alpha_max, lasso_path_fits

log = logging.getLogger(__name__)

DEFAULT_MI_BINS = 10
LASSO_GRID_POINTS = 100
LASSO_GRID_SPAN = 1e-4  # grid reaches alpha_max * span


@dataclass
class FeatureSet:
    """A selected feature list with the parameters that produced it."""

    outcome: str
    method: str  # "mi" | "lasso"
    params: dict
    selected: list[str]
    stats: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.selected)

    def to_dict(self) -> dict:
        return {"outcome": self.outcome, "method": self.method, "params": self.params,
                "selected": list(self.selected), "stats": self.stats}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSet":
        return cls(d["outcome"], d["method"], d["params"], list(d["selected"]), d.get("stats", {}))


def _discretize(v: np.ndarray, bins: int) -> np.ndarray:
    """Integer codes: values kept as-is when there are at most ``bins``
    distinct ones, otherwise equal-frequency binned."""
    u, inverse = np.unique(v, return_inverse=True)
    if u.size <= bins:
        return inverse
    edges = np.quantile(v, np.linspace(0, 1, bins + 1)[1:-1])
    return np.searchsorted(edges, v, side="left")


def mutual_information(x: np.ndarray, y: np.ndarray, bins: int = DEFAULT_MI_BINS) -> float:
    """Plug-in mutual information (natural log) of two samples.

    I(X;Y) = sum p(x,y) ln(p(x,y)/(p(x)p(y))) over the empirical joint
    table; zero-probability cells contribute 0, and a constant argument
    gives exactly 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError("x and y must have equal length >= 2")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    cx = _discretize(x, bins)
    cy = _discretize(y, bins)
    return _mi_from_codes(cx, int(cx.max()) + 1, cy, int(cy.max()) + 1)


def _mi_from_codes(cx: np.ndarray, kx: int, cy: np.ndarray, ky: int) -> float:
    if kx < 2 or ky < 2:
        return 0.0
    n = cx.size
    joint = np.bincount(cx * ky + cy, minlength=kx * ky).reshape(kx, ky) / n
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    nz = joint > 0
    outer = px[:, None] * py[None, :]
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))
    return max(mi, 0.0)


def mi_scores(X: np.ndarray, y: np.ndarray, bins: int = DEFAULT_MI_BINS) -> np.ndarray:
    """Mutual information of every column of X with y."""
    X = np.asarray(X, dtype=np.float64)
    cy = _discretize(np.asarray(y, dtype=np.float64), bins)
    ky = int(cy.max()) + 1
    out = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        cx = _discretize(X[:, j], bins)
        out[j] = _mi_from_codes(cx, int(cx.max()) + 1, cy, ky)
    return out


def top_k_by_score(names: list[str], scores: np.ndarray, k: int) -> list[int]:
    """Indices of the k best scores; ties broken by ascending name."""
    order = sorted(range(len(names)), key=lambda j: (-scores[j], names[j]))
    return order[: min(k, len(names))]


def mi_score_table(enc: EncodedDataset, outcomes: OutcomeSet,
                   bins: int = DEFAULT_MI_BINS) -> dict[str, np.ndarray]:
    """Per-outcome MI score vectors over training rows (reusable across K)."""
    mask = outcomes.observed
    X = enc.values[mask]
    return {name: mi_scores(X, outcomes.values[name][mask], bins) for name in OUTCOME_NAMES}


def select_top_k_mi(enc: EncodedDataset, outcomes: OutcomeSet, k: int,
                    bins: int = DEFAULT_MI_BINS, score_table=None):
    """Per-outcome top-k MI feature sets plus their merged union.

    MI is computed on training (observed) rows only.  Returns
    (per-outcome dict of FeatureSet, union name list sorted ascending).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    names = enc.names()
    if k > len(names):
        log.warning("k=%d exceeds %d columns; selecting everything", k, len(names))
    if score_table is None:
        score_table = mi_score_table(enc, outcomes, bins)
    per_outcome = {}
    union: set[str] = set()
    for name in OUTCOME_NAMES:
        scores = score_table[name]
        idx = top_k_by_score(names, scores, k)
        selected = [names[j] for j in idx]
        per_outcome[name] = FeatureSet(
            outcome=name, method="mi", params={"k": k, "bins": bins},
            selected=selected,
            stats={"scores": [float(scores[j]) for j in idx]},
        )
        union.update(selected)
    return per_outcome, sorted(union)


def lasso_path(enc: EncodedDataset, outcome: np.ndarray, train_mask=None,
               grid_points: int = LASSO_GRID_POINTS, grid_span: float = LASSO_GRID_SPAN,
               tol: float = 1e-6, max_iter: int = 3_000, stop_at_r2: float | None = None):
    """LASSO fits along a geometric alpha grid descending from alpha_max.

    Returns a list of {alpha, r2, support} records.  With ``stop_at_r2``
    the descent stops once the in-sample r² reaches that level (the grid
    point closest to the target is then already bracketed, since r² only
    grows as alpha shrinks).
    """
    mask = np.ones(enc.n_rows, dtype=bool) if train_mask is None else np.asarray(train_mask, bool)
    X = enc.values[mask]
    y = np.asarray(outcome, dtype=np.float64)[mask]
    names = enc.names()
    if np.var(y) == 0:
        raise ValueError("constant outcome on training rows")

    amax = alpha_max(X, y, 1.0)
    grid = np.geomspace(amax, amax * grid_span, grid_points)
    fits = lasso_path_fits(X, y, grid, tol=tol, max_iter=max_iter, stop_r2=stop_at_r2)
    return [{"alpha": rec["alpha"], "r2": rec["r2"],
             "support": [names[j] for j in np.flatnonzero(rec["coef"])]} for rec in fits]


def lasso_select(enc: EncodedDataset, outcome: np.ndarray, target_r2: float = 0.4,
                 train_mask=None, outcome_name: str = "", **path_kwargs) -> FeatureSet:
    """Non-zero LASSO support at the grid alpha whose r² is closest to target.

    When even the densest grid point cannot reach the target, that point
    is returned with a warning (the grid granularity bounds how close the
    achieved r² can get).
    """
    if not 0 < target_r2 < 1:
        raise ValueError("target_r2 must be in (0, 1)")
    path = lasso_path(enc, outcome, train_mask=train_mask, stop_at_r2=target_r2, **path_kwargs)
    best = min(path, key=lambda rec: abs(rec["r2"] - target_r2))
    if best["r2"] < target_r2 and best is path[-1]:
        log.warning("target r2=%.3f unreachable; densest grid point achieves %.3f",
                    target_r2, best["r2"])
    return FeatureSet(
        outcome=outcome_name, method="lasso",
        params={"target_r2": target_r2},
        selected=list(best["support"]),
        stats={"alpha": best["alpha"], "r2": best["r2"], "n_features": len(best["support"])},
    )


def jaccard(a, b) -> float:
    """|a ∩ b| / |a ∪ b| of two feature sets; two empty sets give 0."""
    sa = set(a.selected if isinstance(a, FeatureSet) else a)
    sb = set(b.selected if isinstance(b, FeatureSet) else b)
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


def _standardize_matrix(m: np.ndarray) -> np.ndarray:
    means = m.mean(axis=0)
    sds = m.std(axis=0)
    if np.all(sds == 0):
        raise ValueError("degenerate matrix: no column varies")
    sds = np.where(sds == 0, 1.0, sds)
    return (m - means) / sds


def first_pc_scores(m: np.ndarray, tol: float = 1e-9, max_iter: int = 10_000) -> np.ndarray:
    """First principal-component score vector via power iteration."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2:
        raise ValueError("matrix must have at least 2 rows")
    ms = _standardize_matrix(m)
    p = ms.shape[1]
    v = np.full(p, 1.0 / np.sqrt(p))
    denom = m.shape[0] - 1
    for _ in range(max_iter):
        w = ms.T @ (ms @ v) / denom
        norm = np.linalg.norm(w)
        if norm == 0:
            raise ValueError("degenerate matrix: zero covariance")
        w /= norm
        if np.dot(w, v) < 0:
            w = -w
        if np.max(np.abs(w - v)) < tol:
            v = w
            break
        v = w
    else:
        log.warning("power iteration did not reach tol=%g in %d iterations", tol, max_iter)
    return ms @ v


def first_pc_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """|Pearson correlation| of the two matrices' first PC score vectors.

    The absolute value removes the arbitrary sign of a principal
    component.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0] or a.shape[0] < 2:
        raise ValueError("matrices need identical row counts >= 2")
    sa = first_pc_scores(a)
    sb = first_pc_scores(b)
    if sa.std() == 0 or sb.std() == 0:
        raise ValueError("degenerate matrix: constant principal-component scores")
    return float(abs(np.corrcoef(sa, sb)[0, 1]))


def selection_comparison(enc: EncodedDataset, outcomes: OutcomeSet, k_values,
                         r2_values, bins: int = DEFAULT_MI_BINS,
                         train_mask=None) -> list[dict]:
    """Jaccard / first-PC-correlation grids over (K, r²) cutoff pairs.

    One row per (outcome, K, r²) plus pooled "all" rows built from the
    per-outcome unions.  LASSO sets for every r² cutoff are read off a
    single fitted path per outcome.
    """
    mask = outcomes.observed if train_mask is None else np.asarray(train_mask, bool)
    names = enc.names()
    name_idx = enc.name_index()
    X = enc.values[mask]

    mi_sets: dict[str, dict[int, list[str]]] = {}
    for name in OUTCOME_NAMES:
        scores = mi_scores(X, outcomes.values[name][mask], bins)
        order = top_k_by_score(names, scores, max(k_values))
        mi_sets[name] = {k: [names[j] for j in order[:k]] for k in k_values}

    lasso_sets: dict[str, dict[float, list[str]]] = {}
    for name in OUTCOME_NAMES:
        path = lasso_path(enc, outcomes.values[name], train_mask=mask,
                          stop_at_r2=max(r2_values))
        lasso_sets[name] = {
            r2: min(path, key=lambda rec: abs(rec["r2"] - r2))["support"] for r2 in r2_values
        }

    pooled_mi = {k: sorted(set().union(*(mi_sets[n][k] for n in OUTCOME_NAMES))) for k in k_values}
    pooled_lasso = {r: sorted(set().union(*(lasso_sets[n][r] for n in OUTCOME_NAMES))) for r in r2_values}

    score_cache: dict[tuple, np.ndarray | None] = {}

    def scores_for(selected) -> np.ndarray | None:
        key = tuple(sorted(selected))
        if key not in score_cache:
            try:
                score_cache[key] = first_pc_scores(X[:, [name_idx[c] for c in key]])
            except ValueError:
                score_cache[key] = None  # degenerate selection
        return score_cache[key]

    rows = []
    for outcome in (*OUTCOME_NAMES, "all"):
        for k in k_values:
            mi_set = pooled_mi[k] if outcome == "all" else mi_sets[outcome][k]
            for r2 in r2_values:
                la_set = pooled_lasso[r2] if outcome == "all" else lasso_sets[outcome][r2]
                row = {"outcome": outcome, "k": k, "r2_cutoff": r2,
                       "mi_count": len(mi_set), "lasso_count": len(la_set),
                       "jaccard": jaccard(mi_set, la_set), "first_pc_correlation": None}
                if mi_set and la_set:
                    sa, sb = scores_for(mi_set), scores_for(la_set)
                    if sa is not None and sb is not None and sa.std() > 0 and sb.std() > 0:
                        row["first_pc_correlation"] = float(abs(np.corrcoef(sa, sb)[0, 1]))
                rows.append(row)
    return rows
