"""Coordinate-descent solver for elastic net / LASSO / ridge / OLS, plus an
L2-penalized logistic variant for stacking.

The objective is

    (1/2n)·Σ(y − ŷ)²  +  alpha·l1_ratio·Σ|β|  +  (alpha/2)·(1−l1_ratio)·Σβ²

with features standardized internally at fit time and an unpenalized
intercept.  Coordinate order is cyclic, with glmnet-style active-set
sweeps between full passes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._compat import njit

log = logging.getLogger(__name__)


@dataclass
class LinearModel:
    """Fitted linear predictor on the standardized feature scale."""

    coef: np.ndarray
    intercept: float
    alpha: float
    l1_ratio: float
    feature_means: np.ndarray
    feature_sds: np.ndarray
    kind: str = "linear"  # "linear" | "logistic"
    converged: bool = True
    n_sweeps: int = 0
    feature_names: list[str] | None = None

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        Xs = (X - self.feature_means) / self.feature_sds
        return self.intercept + Xs @ self.coef

    def predict(self, X: np.ndarray) -> np.ndarray:
        eta = self.decision_function(X)
        if self.kind == "logistic":
            return _sigmoid(eta)
        return eta

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coef)

    def to_dict(self) -> dict:
        names = self.feature_names or [f"x{j}" for j in range(self.coef.size)]
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "l1_ratio": self.l1_ratio,
            "intercept": self.intercept,
            "converged": self.converged,
            "n_sweeps": self.n_sweeps,
            "coefficients": {n: c for n, c in zip(names, self.coef.tolist())},
            "feature_means": self.feature_means.tolist(),
            "feature_sds": self.feature_sds.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        names = list(d["coefficients"])
        return cls(
            coef=np.array([d["coefficients"][n] for n in names]),
            intercept=d["intercept"],
            alpha=d["alpha"],
            l1_ratio=d["l1_ratio"],
            feature_means=np.asarray(d["feature_means"], dtype=np.float64),
            feature_sds=np.asarray(d["feature_sds"], dtype=np.float64),
            kind=d.get("kind", "linear"),
            converged=d.get("converged", True),
            n_sweeps=d.get("n_sweeps", 0),
            feature_names=names,
        )


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -30.0, 30.0)))


def standardize(X: np.ndarray):
    """Column means/sds (population); zero-sd columns get sd 1."""
    X = np.asarray(X, dtype=np.float64)
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    sds = np.where(sds == 0, 1.0, sds)
    return (X - means) / sds, means, sds


@njit(cache=True)
def _cd_pass(XT, r, beta, l1, l2, indices):
    """One coordinate sweep over ``indices``; updates beta/r in place."""
    n = r.size
    max_delta = 0.0
    for k in range(indices.size):
        j = indices[k]
        xj = XT[j]
        bj = beta[j]
        rho = np.dot(xj, r) / n + bj
        if rho > l1:
            new = (rho - l1) / (1.0 + l2)
        elif rho < -l1:
            new = (rho + l1) / (1.0 + l2)
        else:
            new = 0.0
        d = new - bj
        if d != 0.0:
            r -= d * xj
            beta[j] = new
            if abs(d) > max_delta:
                max_delta = abs(d)
    return max_delta


@njit(cache=True)
def _cd_fit(XT, r, beta, l1, l2, tol, max_sweeps):
    """Full/active-set alternation until max coefficient change < tol."""
    p = XT.shape[0]
    all_idx = np.arange(p)
    sweeps = 0
    while sweeps < max_sweeps:
        delta = _cd_pass(XT, r, beta, l1, l2, all_idx)
        sweeps += 1
        if delta < tol:
            return sweeps, True
        active = np.flatnonzero(beta)
        while 0 < active.size < p and sweeps < max_sweeps:
            delta = _cd_pass(XT, r, beta, l1, l2, active)
            sweeps += 1
            if delta < tol:
                break
    return sweeps, False


def elastic_net_objective(X: np.ndarray, y: np.ndarray, coef: np.ndarray,
                          intercept: float, alpha: float, l1_ratio: float) -> float:
    """Objective value on already-standardized features."""
    r = y - intercept - X @ coef
    n = y.size
    return (
        0.5 * np.dot(r, r) / n
        + alpha * l1_ratio * np.abs(coef).sum()
        + 0.5 * alpha * (1 - l1_ratio) * np.dot(coef, coef)
    )


def fit_elastic_net(X, y, alpha: float, l1_ratio: float, tol: float = 1e-7,
                    max_iter: int = 10_000, feature_names=None,
                    warm_start: np.ndarray | None = None,
                    track_objective: bool = False) -> LinearModel:
    """Fit by cyclic coordinate descent with soft-thresholding.

    ``max_iter`` bounds the number of coordinate sweeps; hitting it sets
    ``converged=False`` on the returned model.  ``track_objective``
    records the objective after every full sweep in ``model.objective_trace``
    (and disables active-set shortcuts).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError(f"X shape {X.shape} incompatible with y length {y.size}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in inputs")
    if alpha < 0 or not 0 <= l1_ratio <= 1:
        raise ValueError("alpha must be >= 0 and l1_ratio in [0, 1]")

    Xs, means, sds = standardize(X)
    XT = np.ascontiguousarray(Xs.T)
    y_mean = float(y.mean())
    yc = y - y_mean
    beta = np.zeros(X.shape[1]) if warm_start is None else np.array(warm_start, dtype=np.float64)
    r = yc - Xs @ beta
    l1 = alpha * l1_ratio
    l2 = alpha * (1 - l1_ratio)

    trace = []
    if track_objective:
        all_idx = np.arange(X.shape[1])
        trace.append(elastic_net_objective(Xs, yc, beta, 0.0, alpha, l1_ratio))
        sweeps, converged = 0, False
        while sweeps < max_iter:
            delta = _cd_pass(XT, r, beta, l1, l2, all_idx)
            sweeps += 1
            trace.append(elastic_net_objective(Xs, yc, beta, 0.0, alpha, l1_ratio))
            if delta < tol:
                converged = True
                break
    else:
        sweeps, converged = _cd_fit(XT, r, beta, l1, l2, tol, max_iter)
    if not converged:
        log.warning("coordinate descent hit max_iter=%d (alpha=%g, l1_ratio=%g)", max_iter, alpha, l1_ratio)

    model = LinearModel(
        coef=beta, intercept=y_mean, alpha=alpha, l1_ratio=l1_ratio,
        feature_means=means, feature_sds=sds, converged=converged,
        n_sweeps=sweeps, feature_names=list(feature_names) if feature_names is not None else None,
    )
    if track_objective:
        model.objective_trace = trace
    return model


def alpha_max(X, y, l1_ratio: float = 1.0) -> float:
    """Smallest penalty at which all coefficients are zero."""
    if l1_ratio <= 0:
        raise ValueError("alpha_max requires l1_ratio > 0")
    Xs, _, _ = standardize(X)
    yc = y - np.mean(y)
    return float(np.max(np.abs(Xs.T @ yc)) / (y.size * l1_ratio))


def lasso_path_fits(X, y, alphas, tol: float = 1e-6, max_iter: int = 3_000,
                    stop_r2: float | None = None) -> list[dict]:
    """Warm-started LASSO fits along a descending alpha sequence.

    Features are standardized once and the coefficient/residual state is
    carried between grid points, so a whole path costs little more than
    its densest fit.  Each record holds alpha, the coefficient vector,
    the in-sample r², and the convergence flag.  With ``stop_r2`` the
    path ends at the first point reaching that r².
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Xs, _, _ = standardize(X)
    XT = np.ascontiguousarray(Xs.T)
    yc = y - y.mean()
    sst = float(np.dot(yc, yc))
    if sst == 0:
        raise ValueError("constant outcome")
    beta = np.zeros(X.shape[1])
    r = yc.copy()
    path = []
    for alpha in alphas:
        sweeps, converged = _cd_fit(XT, r, beta, float(alpha), 0.0, tol, max_iter)
        r2 = 1.0 - float(np.dot(r, r)) / sst
        path.append({"alpha": float(alpha), "coef": beta.copy(), "r2": r2,
                     "converged": converged, "n_sweeps": sweeps})
        if stop_r2 is not None and r2 >= stop_r2:
            break
    return path


def kkt_residual(model: LinearModel, X, y) -> float:
    """Max subgradient violation of the elastic-net optimality conditions."""
    Xs = (np.asarray(X, dtype=np.float64) - model.feature_means) / model.feature_sds
    yc = np.asarray(y, dtype=np.float64) - model.intercept
    n = yc.size
    r = yc - Xs @ model.coef
    grad = -(Xs.T @ r) / n + model.alpha * (1 - model.l1_ratio) * model.coef
    lam = model.alpha * model.l1_ratio
    nonzero = model.coef != 0
    viol = np.where(
        nonzero,
        np.abs(grad + lam * np.sign(model.coef)),
        np.maximum(0.0, np.abs(grad) - lam),
    )
    return float(viol.max(initial=0.0))


def fit_elastic_net_cv(X, y, alpha_grid, l1_ratio_grid, folds: int, seed: int = 0,
                       tol: float = 1e-6, max_iter: int = 5_000, feature_names=None,
                       cv_tol: float = 1e-4, cv_max_iter: int = 1_000):
    """Pick (alpha, l1_ratio) by k-fold validation MSE, then refit on all rows.

    Returns (model, chosen) where chosen carries the winning parameters and
    the full CV table.  Each fold is standardized once and alphas are
    visited largest-first with warm starts, so a whole path costs little
    more than its densest fit; fold fits use the looser ``cv_tol`` (the
    winner is refit at ``tol``).
    """
    from .tuning import kfold

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    alpha_grid = sorted(set(float(a) for a in alpha_grid), reverse=True)
    l1_ratio_grid = sorted(set(float(r) for r in l1_ratio_grid))
    plan = kfold(y.size, folds, seed)

    cells = {(a, l): [] for a in alpha_grid for l in l1_ratio_grid}
    for fold_idx in range(folds):
        va = plan.fold_indices(fold_idx)
        tr = np.setdiff1d(np.arange(y.size), va)
        if np.var(y[tr]) == 0:
            log.warning("fold %d skipped: constant training outcome", fold_idx)
            continue
        Xs, means, sds = standardize(X[tr])
        XT = np.ascontiguousarray(Xs.T)
        Xva = (X[va] - means) / sds
        y_mean = float(y[tr].mean())
        yc = y[tr] - y_mean
        for l1_ratio in l1_ratio_grid:
            beta = np.zeros(X.shape[1])
            r = yc.copy()
            for alpha in alpha_grid:
                _cd_fit(XT, r, beta, alpha * l1_ratio, alpha * (1 - l1_ratio),
                        cv_tol, cv_max_iter)
                pred = y_mean + Xva @ beta
                cells[(alpha, l1_ratio)].append(float(np.mean((pred - y[va]) ** 2)))

    table = [
        {"alpha": a, "l1_ratio": l, "mean_mse": float(np.mean(v)) if v else float("inf"),
         "fold_mse": list(v)}
        for (a, l), v in cells.items()
    ]
    best = min(table, key=lambda row: row["mean_mse"])
    model = fit_elastic_net(X, y, best["alpha"], best["l1_ratio"], tol=tol,
                            max_iter=max_iter, feature_names=feature_names)
    chosen = {"alpha": best["alpha"], "l1_ratio": best["l1_ratio"],
              "mean_mse": best["mean_mse"], "cv_table": table}
    return model, chosen


@njit(cache=True)
def _logistic_cd(XT, y, beta, intercept, l2, tol, max_sweeps):
    """Cyclic per-coordinate Newton steps on the penalized logistic loss."""
    n = y.size
    p = XT.shape[0]
    eta = np.full(n, intercept)
    for j in range(p):
        if beta[j] != 0.0:
            eta += beta[j] * XT[j]
    sweeps = 0
    while sweeps < max_sweeps:
        max_delta = 0.0
        # intercept (unpenalized)
        prob = 1.0 / (1.0 + np.exp(-np.minimum(np.maximum(eta, -30.0), 30.0)))
        g0 = np.mean(prob - y)
        h0 = max(np.mean(prob * (1.0 - prob)), 1e-10)
        d0 = -g0 / h0
        intercept += d0
        eta += d0
        if abs(d0) > max_delta:
            max_delta = abs(d0)
        for j in range(p):
            xj = XT[j]
            prob = 1.0 / (1.0 + np.exp(-np.minimum(np.maximum(eta, -30.0), 30.0)))
            w = prob * (1.0 - prob)
            g = np.dot(xj, prob - y) / n + l2 * beta[j]
            h = np.dot(xj * xj, w) / n + l2
            if h < 1e-10:
                h = 1e-10
            d = -g / h
            if d != 0.0:
                beta[j] += d
                eta += d * xj
                if abs(d) > max_delta:
                    max_delta = abs(d)
        sweeps += 1
        if max_delta < tol:
            return sweeps, True, intercept
    return sweeps, False, intercept


def fit_logistic(X, y, l2_penalty: float = 1e-3, tol: float = 1e-8,
                 max_iter: int = 1_000, feature_names=None) -> LinearModel:
    """L2-penalized logistic regression; predictions are probabilities.

    Perfect separation with zero penalty cannot converge (coefficients
    diverge); the model comes back flagged ``converged=False``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("logistic fit needs a 0/1 outcome")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite values in inputs")

    Xs, means, sds = standardize(X)
    XT = np.ascontiguousarray(Xs.T)
    beta = np.zeros(X.shape[1])
    sweeps, converged, intercept = _logistic_cd(XT, y, beta, 0.0, float(l2_penalty), tol, max_iter)
    if not converged:
        log.warning("logistic fit hit max_iter=%d (possible separation at low penalty)", max_iter)
    return LinearModel(
        coef=beta, intercept=float(intercept), alpha=float(l2_penalty), l1_ratio=0.0,
        feature_means=means, feature_sds=sds, kind="logistic", converged=converged,
        n_sweeps=sweeps, feature_names=list(feature_names) if feature_names is not None else None,
    )


def fit_ols(X, y) -> LinearModel:
    """Closed-form least squares on standardized features (test oracle)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Xs, means, sds = standardize(X)
    coef, *_ = np.linalg.lstsq(Xs, y - y.mean(), rcond=None)
    return LinearModel(coef=coef, intercept=float(y.mean()), alpha=0.0, l1_ratio=0.0,
                       feature_means=means, feature_sds=sds)
