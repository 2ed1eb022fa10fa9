"""Random forest regression built from scratch: bootstrap CART trees with
random split-variable subsetting, leaf response archives for quantile
regression forests, and permutation importance."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import SpatialDataset

__all__ = [
    "RegressionTree",
    "ForestModel",
    "fit_forest",
    "forest_from_dataset",
    "rf_predict",
    "qrf_quantile",
    "permutation_importance",
]


class RegressionTree:
    """Binary regression tree stored as parallel arrays (children follow their
    parent, so a single forward pass routes a batch of rows)."""

    __slots__ = ("feature", "threshold", "left", "right", "leaf_value",
                 "leaf_rows", "left_levels", "node_levels", "left_count", "right_count")

    def __init__(self):
        self.feature: list[int] = []      # -1 marks a leaf
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaf_value: list[float] = []
        self.leaf_rows: list[np.ndarray | None] = []  # original row ids, with multiplicity
        self.left_levels: list[np.ndarray | None] = []  # categorical levels routed left
        self.node_levels: list[np.ndarray | None] = []  # all levels seen at the node
        self.left_count: list[int] = []
        self.right_count: list[int] = []

    def _new_node(self):
        self.feature.append(-1)
        self.threshold.append(math.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_value.append(math.nan)
        self.leaf_rows.append(None)
        self.left_levels.append(None)
        self.node_levels.append(None)
        self.left_count.append(0)
        self.right_count.append(0)
        return len(self.feature) - 1

    @property
    def n_nodes(self):
        return len(self.feature)

    def route(self, X: np.ndarray) -> np.ndarray:
        """Leaf node id for every row of X."""
        node = np.zeros(len(X), dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                continue
            mask = node == i
            if not mask.any():
                continue
            values = X[mask, self.feature[i]]
            if self.left_levels[i] is not None:
                go_left = np.isin(values, self.left_levels[i])
                seen = np.isin(values, self.node_levels[i])
                # unseen level: follow the child holding more training rows
                if not seen.all():
                    go_left = np.where(seen, go_left, self.left_count[i] >= self.right_count[i])
            else:
                go_left = values <= self.threshold[i]
            node[mask] = np.where(go_left, self.left[i], self.right[i])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        leaf = self.route(X)
        return np.asarray(self.leaf_value, dtype=float)[leaf]


def _best_numeric_split(values, targets):
    """Best SSE split of a numeric feature; returns (sse, threshold) or None."""
    order = np.argsort(values, kind="stable")
    vs = values[order]
    ys = targets[order]
    distinct = np.flatnonzero(vs[:-1] < vs[1:])
    if distinct.size == 0:
        return None
    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    total, totalsq, n = csum[-1], csq[-1], len(ys)
    left_n = distinct + 1
    right_n = n - left_n
    sse_left = csq[distinct] - csum[distinct] ** 2 / left_n
    sse_right = (totalsq - csq[distinct]) - (total - csum[distinct]) ** 2 / right_n
    sse = sse_left + sse_right
    best = int(np.argmin(sse))
    i = distinct[best]
    return float(sse[best]), 0.5 * (vs[i] + vs[i + 1])


def _best_categorical_split(values, targets):
    """Best SSE split over level subsets, searching along the mean-response
    ordering of levels (optimal for regression SSE)."""
    levels, inverse = np.unique(values, return_inverse=True)
    if len(levels) < 2:
        return None
    sums = np.bincount(inverse, weights=targets)
    sqs = np.bincount(inverse, weights=targets * targets)
    counts = np.bincount(inverse).astype(float)
    order = np.argsort(sums / counts, kind="stable")
    csum = np.cumsum(sums[order])
    csq = np.cumsum(sqs[order])
    ccnt = np.cumsum(counts[order])
    total, totalsq, n = csum[-1], csq[-1], ccnt[-1]
    left_n = ccnt[:-1]
    right_n = n - left_n
    sse = (csq[:-1] - csum[:-1] ** 2 / left_n) + (totalsq - csq[:-1]) - (total - csum[:-1]) ** 2 / right_n
    best = int(np.argmin(sse))
    left_levels = np.sort(levels[order[: best + 1]])
    return float(sse[best]), left_levels


def _grow_tree(X, y, rows, m, min_node_size, categorical, rng):
    """Grow one CART tree on the (bootstrap) sample X[rows], y[rows]."""
    tree = RegressionTree()
    Xb = X[rows]
    yb = y[rows]
    p = X.shape[1]
    root = tree._new_node()
    stack = [(root, np.arange(len(rows)))]
    while stack:
        node, idx = stack.pop()
        t = yb[idx]
        if len(idx) < 2 * min_node_size or np.ptp(t) == 0.0:
            _finish_leaf(tree, node, rows[idx], t)
            continue
        feats = np.sort(rng.choice(p, size=m, replace=False))
        best = None
        for f in feats:
            v = Xb[idx, f]
            split = (_best_categorical_split(v, t) if f in categorical
                     else _best_numeric_split(v, t))
            if split is None:
                continue
            sse, rule = split
            key = (sse, f, rule if np.isscalar(rule) else float(rule[0]))
            if best is None or key < best[0]:
                best = (key, f, rule)
        if best is None:
            _finish_leaf(tree, node, rows[idx], t)
            continue
        _, f, rule = best
        if f in categorical:
            go_left = np.isin(Xb[idx, f], rule)
            tree.left_levels[node] = rule
            tree.node_levels[node] = np.unique(Xb[idx, f])
        else:
            go_left = Xb[idx, f] <= rule
            tree.threshold[node] = rule
        tree.feature[node] = int(f)
        left_idx = idx[go_left]
        right_idx = idx[~go_left]
        left = tree._new_node()
        right = tree._new_node()
        tree.left[node], tree.right[node] = left, right
        tree.left_count[node] = len(left_idx)
        tree.right_count[node] = len(right_idx)
        # push right first so the left subtree is grown (and numbered) first
        stack.append((right, right_idx))
        stack.append((left, left_idx))
    return tree


def _finish_leaf(tree, node, original_rows, targets):
    tree.feature[node] = -1
    tree.leaf_value[node] = float(np.mean(targets))
    tree.leaf_rows[node] = np.sort(original_rows)


@dataclass
class ForestModel:
    trees: list[RegressionTree]
    m: int
    min_node_size: int
    seed: int
    n_train: int
    train_y: np.ndarray
    categorical: tuple[int, ...] = ()
    bootstrap: bool = True
    oob_indices: list[np.ndarray] = field(default_factory=list)

    @property
    def B(self) -> int:
        return len(self.trees)


def fit_forest(X, y, n_trees: int = 1000, m: int | None = None, min_node_size: int = 5,
               seed: int = 0, categorical=(), bootstrap: bool = True,
               n_threads: int = 1) -> ForestModel:
    """Fit a random forest of ``n_trees`` deep, unpruned CART trees.

    Each tree gets its own RNG stream derived from (seed, tree index), so the
    result is identical for any thread count.  ``m`` defaults to ceil(p/3);
    ``bootstrap=False`` grows every tree on the full sample (a test hook).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < 2 or p < 1:
        raise ValueError("need at least 2 rows and 1 covariate")
    if m is None:
        m = max(1, math.ceil(p / 3))
    if not 1 <= m <= p:
        raise ValueError(f"m={m} must be in [1, p={p}]")
    categorical = tuple(sorted(categorical))
    cat_set = frozenset(categorical)

    def build(b):
        rng = np.random.default_rng([seed, b])
        if bootstrap:
            rows = np.sort(rng.integers(0, n, size=n))
            oob = np.setdiff1d(np.arange(n), rows)
        else:
            rows = np.arange(n)
            oob = np.empty(0, dtype=int)
        return _grow_tree(X, y, rows, m, min_node_size, cat_set, rng), oob

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(build, range(n_trees)))
    else:
        results = [build(b) for b in range(n_trees)]
    trees = [t for t, _ in results]
    oob = [o for _, o in results]
    return ForestModel(trees=trees, m=m, min_node_size=min_node_size, seed=seed,
                       n_train=n, train_y=y.copy(), categorical=categorical,
                       bootstrap=bootstrap, oob_indices=oob)


def forest_from_dataset(dataset: SpatialDataset, **kwargs) -> ForestModel:
    categorical = tuple(j for j, c in enumerate(dataset.columns) if c.is_categorical)
    return fit_forest(dataset.covariates, dataset.response, categorical=categorical, **kwargs)


def rf_predict(model: ForestModel, X) -> np.ndarray:
    """Forest prediction: mean of per-tree leaf means."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros(len(X))
    for tree in model.trees:
        out += tree.predict(X)
    return out / model.B


def qrf_weights(model: ForestModel, X) -> np.ndarray:
    """QRF weight matrix (rows: prediction points, cols: training rows).

    Training row i gets weight (1/B) * sum_b multiplicity_b(i, leaf)/leaf size
    over trees where the point lands in the same leaf as i.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W = np.zeros((len(X), model.n_train))
    for tree in model.trees:
        leaf_ids = tree.route(X)
        leaves, compact = np.unique(leaf_ids, return_inverse=True)
        leaf_w = np.zeros((len(leaves), model.n_train))
        for k, leaf in enumerate(leaves):
            rows = tree.leaf_rows[leaf]
            np.add.at(leaf_w[k], rows, 1.0 / len(rows))
        W += leaf_w[compact]
    return W / model.B


def qrf_quantile(model: ForestModel, X, alpha) -> np.ndarray:
    """Weighted-empirical-CDF quantiles (left-continuous inverse) at alpha.

    ``alpha`` may be a scalar or a sequence; returns shape (n_points,) or
    (n_points, n_alphas).
    """
    alphas = np.atleast_1d(np.asarray(alpha, dtype=float))
    if np.any((alphas <= 0) | (alphas >= 1)):
        raise ValueError("quantile levels must be in (0, 1)")
    W = qrf_weights(model, X)
    order = np.argsort(model.train_y, kind="stable")
    y_sorted = model.train_y[order]
    cdf = np.cumsum(W[:, order], axis=1)
    out = np.empty((len(W), len(alphas)))
    for j, a in enumerate(alphas):
        pos = np.argmax(cdf >= a - 1e-12, axis=1)
        out[:, j] = y_sorted[pos]
    if np.isscalar(alpha) or np.asarray(alpha).ndim == 0:
        return out[:, 0]
    return out


def permutation_importance(model: ForestModel, X, y, seed: int = 0, permuter=None) -> np.ndarray:
    """Average out-of-bag MSE increase per covariate when that covariate is
    permuted.  ``permuter(rng, n)`` may override the permutation (test hook)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    totals = np.zeros(p)
    used = 0
    for b, (tree, oob) in enumerate(zip(model.trees, model.oob_indices)):
        if len(oob) == 0:
            continue
        used += 1
        X_oob = X[oob]
        y_oob = y[oob]
        base_mse = float(np.mean((tree.predict(X_oob) - y_oob) ** 2))
        for j in range(p):
            rng = np.random.default_rng([seed, b, j])
            perm = permuter(rng, len(oob)) if permuter else rng.permutation(len(oob))
            Xp = X_oob.copy()
            Xp[:, j] = X_oob[perm, j]
            mse = float(np.mean((tree.predict(Xp) - y_oob) ** 2))
            totals[j] += mse - base_mse
    if used == 0:
        return np.zeros(p)
    return totals / used
