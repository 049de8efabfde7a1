"""Native CART decision trees, random forests, and gradient-boosted trees
with gain-based feature importance.

Split search runs on quantile-binned feature codes (at most ``max_bins``
candidate thresholds per feature).  Features with no more distinct values
than bins are represented exactly, and thresholds are then midpoints
between adjacent observed values.  Regression splits maximize the
sum-of-squares reduction; classification uses Gini reduction (twice the
same quantity for 0/1 targets).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._compat import njit

log = logging.getLogger(__name__)

DEFAULT_MAX_BINS = 256
_LEAF = -1


class FeatureBinner:
    """Per-feature split-candidate grid.

    ``cuts[f]`` holds ascending candidate thresholds; a value x falls in
    bin ``searchsorted(cuts, x, "left")`` so that x <= cuts[b] exactly
    when bin(x) <= b.  Cuts are midpoints between adjacent observed
    values (all of them when a feature has <= max_bins distinct values,
    otherwise at data quantiles).
    """

    def __init__(self, cuts: list[np.ndarray]):
        self.cuts = cuts
        self._n_cuts = np.array([c.size for c in cuts], dtype=np.int64)

    @property
    def n_features(self) -> int:
        return len(self.cuts)

    @classmethod
    def fit(cls, X: np.ndarray, max_bins: int = DEFAULT_MAX_BINS) -> "FeatureBinner":
        if not 2 <= max_bins <= 256:
            raise ValueError("max_bins must be in [2, 256]")
        X = np.asarray(X, dtype=np.float64)
        cuts = []
        for j in range(X.shape[1]):
            u = np.unique(X[:, j])
            if u.size <= max_bins:
                cuts.append((u[:-1] + u[1:]) / 2.0)
                continue
            qs = np.quantile(X[:, j], np.linspace(0, 1, max_bins + 1)[1:-1])
            # snap each quantile to the midpoint between surrounding values
            hi = np.searchsorted(u, qs, side="right")
            hi = np.clip(hi, 1, u.size - 1)
            cuts.append(np.unique((u[hi - 1] + u[hi]) / 2.0))
        return cls(cuts)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        codes = np.empty(X.shape, dtype=np.uint8)
        for j, c in enumerate(self.cuts):
            codes[:, j] = np.searchsorted(c, X[:, j], side="left").astype(np.uint8)
        return np.ascontiguousarray(codes)

    def n_cuts(self) -> np.ndarray:
        return self._n_cuts


@njit(cache=True)
def _hist_fill(codes, rows, feats, offsets, num, weights, hist):
    """Accumulate (weight, weight*num) per feature slot into packed bins."""
    for a in range(rows.size):
        i = rows[a]
        w = weights[i]
        g = num[i] * w
        for b in range(feats.size):
            s = offsets[b] + codes[i, feats[b]]
            hist[s, 0] += w
            hist[s, 1] += g


@njit(cache=True)
def _scan_splits(hist, offsets, n_cuts, min_leaf_w, total_w, total_g):
    """Best (feature slot, cut index, gain) over the packed histograms.

    Iteration order (features ascending, cuts ascending) plus strict
    improvement makes ties resolve to the lowest feature id and lowest
    threshold.
    """
    best_gain = -1.0
    best_b = -1
    best_cut = -1
    parent = total_g * total_g / total_w
    for b in range(n_cuts.size):
        wl = 0.0
        gl = 0.0
        base = offsets[b]
        for c in range(n_cuts[b]):
            wl += hist[base + c, 0]
            gl += hist[base + c, 1]
            if wl < min_leaf_w:
                continue
            wr = total_w - wl
            if wr < min_leaf_w:
                break
            gr = total_g - gl
            gain = gl * gl / wl + gr * gr / wr - parent
            if gain > best_gain:
                best_gain = gain
                best_b = b
                best_cut = c
    return best_b, best_cut, best_gain


@dataclass
class DecisionTree:
    """Flat-array binary CART tree; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    max_depth: int | None
    min_samples_leaf: int
    feature_gains: dict[int, float] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        idx = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feats = self.feature[idx]
            internal = feats >= 0
            if not internal.any():
                return self.value[idx]
            rows = np.where(internal)[0]
            node = idx[rows]
            go_left = X[rows, self.feature[node]] <= self.threshold[node]
            idx[rows] = np.where(go_left, self.left[node], self.right[node])

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        stack = [0]
        while stack:
            n = stack.pop()
            if self.feature[n] >= 0:
                depths[self.left[n]] = depths[n] + 1
                depths[self.right[n]] = depths[n] + 1
                stack += [int(self.left[n]), int(self.right[n])]
        return int(depths.max(initial=0))

    def _node_dict(self, i: int) -> dict:
        if self.feature[i] == _LEAF:
            return {"leaf": float(self.value[i]), "n_samples": float(self.n_samples[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "n_samples": float(self.n_samples[i]),
            "left": self._node_dict(int(self.left[i])),
            "right": self._node_dict(int(self.right[i])),
        }

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "feature_gains": {str(k): v for k, v in self.feature_gains.items()},
            "root": self._node_dict(0),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        nodes = []

        def walk(nd):
            slot = len(nodes)
            nodes.append(None)
            if "leaf" in nd:
                nodes[slot] = (_LEAF, 0.0, _LEAF, _LEAF, nd["leaf"], nd["n_samples"])
            else:
                li = walk(nd["left"])
                ri = walk(nd["right"])
                nodes[slot] = (nd["feature"], nd["threshold"], li, ri, 0.0, nd["n_samples"])
            return slot

        walk(d["root"])
        arr = list(zip(*nodes))
        return cls(
            feature=np.array(arr[0], dtype=np.int64),
            threshold=np.array(arr[1], dtype=np.float64),
            left=np.array(arr[2], dtype=np.int64),
            right=np.array(arr[3], dtype=np.int64),
            value=np.array(arr[4], dtype=np.float64),
            n_samples=np.array(arr[5], dtype=np.float64),
            max_depth=d.get("max_depth"),
            min_samples_leaf=d.get("min_samples_leaf", 1),
            feature_gains={int(k): v for k, v in d.get("feature_gains", {}).items()},
        )


def _grow_tree(codes, binner, num, weights, rows, max_depth, min_samples_leaf,
               feature_subset, per_split_features, rng, classification, leaf_den=None):
    """Shared grower for standalone trees, forest trees, and boosting trees.

    ``num`` is the split/leaf target (y, or residuals for boosting);
    ``leaf_den`` turns leaf values into Newton steps sum(w*num)/sum(w*den).
    When the feature set is fixed for the whole tree, child histograms are
    derived by subtraction from the parent where possible.
    """
    n_cuts_all = binner.n_cuts()
    base_feats = np.sort(np.asarray(feature_subset, dtype=np.int64))
    resample = per_split_features is not None and per_split_features < base_feats.size
    if not resample:
        fixed_offsets = np.concatenate(([0], np.cumsum(n_cuts_all[base_feats] + 1)))[:-1]
        fixed_slots = int((n_cuts_all[base_feats] + 1).sum())

    feature, threshold, left, right, value, n_samples = [], [], [], [], [], []
    gains: dict[int, float] = {}

    def leaf_value(idx):
        w = weights[idx]
        wsum = w.sum()
        num_sum = np.dot(w, num[idx])
        if leaf_den is None:
            return num_sum / wsum
        den_sum = np.dot(w, leaf_den[idx])
        return num_sum / den_sum if den_sum > 0 else 0.0

    def new_node(idx):
        slot = len(feature)
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(_LEAF)
        right.append(_LEAF)
        value.append(leaf_value(idx))
        n_samples.append(weights[idx].sum())
        return slot

    def fill(idx, feats, offsets, slots):
        hist = np.zeros((slots, 2))
        _hist_fill(codes, idx, feats, offsets, num, weights, hist)
        return hist

    def splittable(idx, depth):
        if max_depth is not None and depth >= max_depth:
            return False
        return weights[idx].sum() >= 2 * min_samples_leaf and idx.size >= 2

    stack = [(rows, 0, new_node(rows), None)]
    while stack:
        idx, depth, slot, hist = stack.pop()
        if not splittable(idx, depth):
            continue
        node_y = num[idx]
        if node_y.max() == node_y.min():
            continue  # pure node
        if resample:
            feats = np.sort(rng.choice(base_feats, size=per_split_features, replace=False))
            offsets = np.concatenate(([0], np.cumsum(n_cuts_all[feats] + 1)))[:-1]
            slots = int((n_cuts_all[feats] + 1).sum())
            hist = fill(idx, feats, offsets, slots)
        else:
            feats, offsets, slots = base_feats, fixed_offsets, fixed_slots
            if hist is None:
                hist = fill(idx, feats, offsets, slots)
        first = hist[offsets[0]: offsets[0] + n_cuts_all[feats[0]] + 1]
        total_w = first[:, 0].sum()
        total_g = first[:, 1].sum()
        b, cut, gain = _scan_splits(hist, offsets, n_cuts_all[feats],
                                    float(min_samples_leaf), total_w, total_g)
        if b < 0:
            continue  # no valid split
        f = int(feats[b])
        go_left = codes[idx, f] <= cut
        idx_l, idx_r = idx[go_left], idx[~go_left]
        if idx_l.size == 0 or idx_r.size == 0:
            continue
        recorded = 2.0 * gain if classification else gain
        gains[f] = gains.get(f, 0.0) + max(recorded, 0.0)
        feature[slot] = f
        threshold[slot] = float(binner.cuts[f][cut])
        left[slot] = new_node(idx_l)
        right[slot] = new_node(idx_r)

        need_l = splittable(idx_l, depth + 1)
        need_r = splittable(idx_r, depth + 1)
        hist_l = hist_r = None
        if not resample and (need_l or need_r):
            small, large = (idx_l, idx_r) if idx_l.size <= idx_r.size else (idx_r, idx_l)
            hist_small = fill(small, feats, offsets, slots)
            hist_large = hist - hist_small
            hist_l, hist_r = (hist_small, hist_large) if small is idx_l else (hist_large, hist_small)
        if need_l:
            stack.append((idx_l, depth + 1, left[slot], hist_l))
        if need_r:
            stack.append((idx_r, depth + 1, right[slot], hist_r))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        n_samples=np.array(n_samples, dtype=np.float64),
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
        feature_gains=gains,
    )


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite values in X")
    return X


def _binned(X, binner, codes, max_bins):
    if binner is None:
        binner = FeatureBinner.fit(X, max_bins)
        codes = binner.transform(X)
    elif codes is None:
        codes = binner.transform(X)
    return binner, codes


def fit_tree(X, y, max_depth=None, min_samples_leaf=5, feature_subset=None,
             row_weights=None, task="regression", binner=None, codes=None,
             max_bins=DEFAULT_MAX_BINS) -> DecisionTree:
    """Greedy best-split CART on (a feature subset of) X.

    Regression minimizes weighted variance; classification (0/1 target)
    minimizes weighted Gini impurity.  With no valid split at the root,
    the result is a single leaf predicting the target mean.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if task not in ("regression", "classification"):
        raise ValueError(f"unknown task {task!r}")
    if task == "classification" and not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("classification target must be 0/1")
    binner, codes = _binned(X, binner, codes, max_bins)
    weights = np.ones(y.size) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
    rows = np.flatnonzero(weights > 0).astype(np.int64)
    subset = np.arange(X.shape[1]) if feature_subset is None else feature_subset
    return _grow_tree(codes, binner, y, weights, rows, max_depth, min_samples_leaf,
                      subset, None, None, task == "classification")


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    task: str
    n_estimators: int
    max_features: float
    bootstrap: bool
    seed: int
    n_features: int
    max_depth: int | None = None
    min_samples_leaf: int = 5

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        out = np.zeros(X.shape[0])
        for t in self.trees:
            out += t.predict(X)
        return out / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "model": "random_forest", "task": self.task, "n_estimators": self.n_estimators,
            "max_features": self.max_features, "bootstrap": self.bootstrap, "seed": self.seed,
            "n_features": self.n_features, "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(
            trees=[DecisionTree.from_dict(t) for t in d["trees"]],
            task=d["task"], n_estimators=d["n_estimators"], max_features=d["max_features"],
            bootstrap=d["bootstrap"], seed=d["seed"], n_features=d["n_features"],
            max_depth=d.get("max_depth"), min_samples_leaf=d.get("min_samples_leaf", 5),
        )


def fit_random_forest(X, y, n_estimators=100, max_features=0.33, min_samples_leaf=5,
                      max_depth=None, bootstrap=True, task="regression", seed=0,
                      binner=None, codes=None, max_bins=DEFAULT_MAX_BINS) -> ForestModel:
    """Bagged CART trees with a fresh random feature subset per split.

    Per-tree randomness is derived from (seed, tree index), so results do
    not depend on scheduling.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    binner, codes = _binned(X, binner, codes, max_bins)
    p = X.shape[1]
    k = max(1, int(np.ceil(max_features * p)))
    all_feats = np.arange(p)
    classification = task == "classification"
    trees = []
    for t in range(n_estimators):
        rng = np.random.default_rng([seed, t])
        if bootstrap:
            counts = np.bincount(rng.integers(0, y.size, y.size), minlength=y.size)
            weights = counts.astype(np.float64)
        else:
            weights = np.ones(y.size)
        rows = np.flatnonzero(weights > 0).astype(np.int64)
        trees.append(
            _grow_tree(codes, binner, y, weights, rows, max_depth, min_samples_leaf,
                       all_feats, k if k < p else None, rng, classification)
        )
    return ForestModel(trees=trees, task=task, n_estimators=n_estimators,
                       max_features=max_features, bootstrap=bootstrap, seed=seed,
                       n_features=p, max_depth=max_depth, min_samples_leaf=min_samples_leaf)


@dataclass
class GbtModel:
    trees: list[DecisionTree]
    learning_rate: float
    n_estimators: int
    max_depth: int
    subsample: float
    colsample_bytree: float
    base_score: float
    loss: str
    seed: int
    n_features: int
    min_samples_leaf: int = 1
    train_loss_trace: list[float] = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = _as_matrix(X)
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def predict(self, X) -> np.ndarray:
        raw = self.decision_function(X)
        if self.loss == "logistic":
            return 1.0 / (1.0 + np.exp(-np.clip(raw, -30, 30)))
        return raw

    def to_dict(self) -> dict:
        return {
            "model": "gbt", "loss": self.loss, "learning_rate": self.learning_rate,
            "n_estimators": self.n_estimators, "max_depth": self.max_depth,
            "subsample": self.subsample, "colsample_bytree": self.colsample_bytree,
            "base_score": self.base_score, "seed": self.seed, "n_features": self.n_features,
            "min_samples_leaf": self.min_samples_leaf,
            "train_loss_trace": list(self.train_loss_trace),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        return cls(
            trees=[DecisionTree.from_dict(t) for t in d["trees"]],
            learning_rate=d["learning_rate"], n_estimators=d["n_estimators"],
            max_depth=d["max_depth"], subsample=d["subsample"],
            colsample_bytree=d["colsample_bytree"], base_score=d["base_score"],
            loss=d["loss"], seed=d["seed"], n_features=d["n_features"],
            min_samples_leaf=d.get("min_samples_leaf", 1),
            train_loss_trace=d.get("train_loss_trace", []),
        )


def fit_gbt(X, y, learning_rate=0.1, n_estimators=100, max_depth=3, subsample=1.0,
            colsample_bytree=1.0, min_samples_leaf=1, loss="squared", seed=0,
            binner=None, codes=None, max_bins=DEFAULT_MAX_BINS) -> GbtModel:
    """Additive residual-correcting trees with row and feature subsampling.

    Squared loss fits each tree to residuals; logistic loss fits trees to
    negative gradients with one-Newton-step leaf values and a log-odds
    base score.  The full-sample training loss after each round is kept
    in ``train_loss_trace``.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if loss not in ("squared", "logistic"):
        raise ValueError(f"unknown loss {loss!r}")
    if loss == "logistic" and not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("logistic loss needs a 0/1 target")
    binner, codes = _binned(X, binner, codes, max_bins)

    n, p = X.shape
    if loss == "logistic":
        rate = min(max(float(y.mean()), 1e-6), 1 - 1e-6)
        base = float(np.log(rate / (1 - rate)))
    else:
        base = float(y.mean())

    raw = np.full(n, base)
    n_rows = max(1, int(np.ceil(subsample * n)))
    n_feats = max(1, int(np.ceil(colsample_bytree * p)))
    trees: list[DecisionTree] = []
    trace: list[float] = []
    for m in range(int(n_estimators)):
        rng = np.random.default_rng([seed, m])
        rows = np.sort(rng.choice(n, size=n_rows, replace=False)).astype(np.int64) \
            if n_rows < n else np.arange(n, dtype=np.int64)
        feats = np.sort(rng.choice(p, size=n_feats, replace=False)) if n_feats < p else np.arange(p)
        weights = np.zeros(n)
        weights[rows] = 1.0
        if loss == "logistic":
            prob = 1.0 / (1.0 + np.exp(-np.clip(raw, -30, 30)))
            grad = y - prob
            hess = prob * (1.0 - prob)
            tree = _grow_tree(codes, binner, grad, weights, rows, max_depth,
                              min_samples_leaf, feats, None, None, False, leaf_den=hess)
        else:
            grad = y - raw
            tree = _grow_tree(codes, binner, grad, weights, rows, max_depth,
                              min_samples_leaf, feats, None, None, False)
        raw += learning_rate * tree.predict(X)
        trees.append(tree)
        if loss == "logistic":
            prob = 1.0 / (1.0 + np.exp(-np.clip(raw, -30, 30)))
            trace.append(float(np.mean((prob - y) ** 2)))
        else:
            trace.append(float(np.mean((raw - y) ** 2)))

    return GbtModel(trees=trees, learning_rate=learning_rate, n_estimators=int(n_estimators),
                    max_depth=max_depth, subsample=subsample, colsample_bytree=colsample_bytree,
                    base_score=base, loss=loss, seed=seed, n_features=p,
                    min_samples_leaf=min_samples_leaf, train_loss_trace=trace)


def feature_importance(model) -> np.ndarray:
    """Per-feature split gains summed over all trees, normalized to sum 1.

    A model with no splits at all yields the unnormalized zero vector
    (logged); unused features are exactly 0.
    """
    imp = np.zeros(model.n_features)
    for tree in model.trees:
        for f, g in tree.feature_gains.items():
            imp[f] += g
    total = imp.sum()
    if total <= 0:
        log.warning("model has no splits; importance vector is all-zero")
        return imp
    return imp / total
