"""Regression-tree ensemble used as the nuisance learner for the DML estimators.

Trees are grown depth-first on a bootstrap resample.  At every node ``m``
candidate features are drawn without replacement (all of them by default)
and every midpoint between consecutive distinct values is scored.  Two split
losses are available:

``"sse"`` (default)
    total within-child sum of squares, the CART loss;
``"mse"``
    unweighted sum of the two child mean squared errors,
    ``(1/n_L) sum_L (y - ybar_L)^2 + (1/n_R) sum_R (y - ybar_R)^2``.

A node is split only when the best candidate's loss is below the node's own
loss under the same criterion.  Ties go to the lowest feature index and then
the lowest threshold.

Random stream layout, per tree ``b``: a generator seeded with
``(seed, b)`` first draws the ``n`` bootstrap indices, then one feature subset
per visited node in depth-first, left-before-right order (no draws when all
features are used).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

__all__ = [
    "ForestParams",
    "RegressionTree",
    "RandomForestRegressor",
    "best_split",
    "fit_forest",
    "predict",
    "DESK_FOREST",
    "FULL_FOREST",
]

_LEAF = -1
_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class ForestParams:
    """Hyperparameters of a :class:`RandomForestRegressor`."""

    n_trees: int = 50
    max_depth: int = 5
    min_samples_split: int = 2
    n_split_features: int | str = "all"
    seed: int = 0
    bootstrap: bool = True
    subsample_features: bool = True
    criterion: str = "sse"

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if isinstance(self.n_split_features, str):
            if self.n_split_features not in ("sqrt", "all"):
                raise ValueError("n_split_features must be 'sqrt', 'all' or a positive int")
        elif self.n_split_features < 1:
            raise ValueError("n_split_features must be >= 1")
        if self.criterion not in ("mse", "sse"):
            raise ValueError("criterion must be 'mse' or 'sse'")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def resolve_m(self, p: int) -> int:
        if not self.subsample_features or self.n_split_features == "all":
            return p
        if self.n_split_features == "sqrt":
            return max(1, int(math.sqrt(p)))
        if self.n_split_features > p:
            raise ValueError(
                f"n_split_features={self.n_split_features} exceeds the {p} available features"
            )
        return int(self.n_split_features)


# 50 trees of depth 5; the Monte Carlo default.
DESK_FOREST = ForestParams(n_trees=50, max_depth=5, min_samples_split=2)
# 200 trees of depth 15, min split 5; the estimate workflow default.
FULL_FOREST = ForestParams(n_trees=200, max_depth=15, min_samples_split=5)


def best_split(X, y, criterion="sse"):
    """Best midpoint split of one node over the columns of ``X``.

    Parameters
    ----------
    X : ndarray of shape (n, k)
        Candidate feature values of the samples in the node.
    y : ndarray of shape (n,)
    criterion : {"sse", "mse"}

    Returns
    -------
    (loss, column, threshold) or None
        ``None`` when every column is constant.  Ties (losses within a relative
        ``1e-10`` of the node's total) go to the lowest column, then the lowest
        threshold.
    """
    n = X.shape[0]
    if n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable").T
    xs = np.take_along_axis(X.T, order, axis=1)
    ys = (y - y.mean())[order]
    found = _scan_sorted(xs, ys, criterion)
    if found is None:
        return None
    loss, col, i = found
    return loss, col, 0.5 * (xs[col, i] + xs[col, i + 1])


def _scan_sorted(xs, ys, criterion):
    """Split search on pre-sorted rows.

    ``xs[k]`` holds candidate feature ``k`` in ascending order and ``ys[k]``
    the centred outcomes in the same order.  Returns ``(loss, k, i)`` for a
    split after sorted position ``i``, or None.
    """
    n = xs.shape[1]
    # a split after sorted position i is valid where xs[i] < xs[i + 1]
    valid = xs[:, :-1] < xs[:, 1:]
    if not valid.any():
        return None
    cs = np.cumsum(ys, axis=1)
    cs2 = np.cumsum(ys * ys, axis=1)
    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left
    s_left = cs[:, :-1]
    s_right = cs[:, -1:] - s_left
    sse_left = cs2[:, :-1] - s_left * s_left / n_left
    sse_right = (cs2[:, -1:] - cs2[:, :-1]) - s_right * s_right / n_right
    if criterion == "mse":
        loss = sse_left / n_left + sse_right / n_right
    else:
        loss = sse_left + sse_right
    loss = np.where(valid, loss, np.inf)
    # losses within rounding of the minimum count as ties, so the choice does
    # not flip when y is shifted by a constant
    scale = cs2[0, -1] / n if criterion == "mse" else cs2[0, -1]
    tied = loss <= loss.min() + _TIE_RTOL * scale
    col, i = divmod(int(np.argmax(tied)), n - 1)
    return float(loss[col, i]), col, i


def _node_loss(y, criterion):
    r = y - y.mean()
    sse = float(r @ r)
    return sse / y.shape[0] if criterion == "mse" else sse


class RegressionTree:
    """A fitted regression tree stored as flat node arrays.

    ``feature[k] == -1`` marks node ``k`` as a leaf.  Samples with
    ``x[feature] <= threshold`` go left.
    """

    def __init__(self, feature, threshold, left, right, value, depth):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value
        self.depth = depth

    @property
    def n_leaves(self):
        return int(np.sum(self.feature == _LEAF))

    @classmethod
    def grow(cls, X, y, *, max_depth, min_samples_split, m, criterion, rng):
        n, p = X.shape
        Xt = np.ascontiguousarray(X.T)
        feature, threshold, left, right, value = [], [], [], [], []
        reached = 0
        go_left = np.zeros(n, dtype=bool)

        def new_node():
            feature.append(_LEAF)
            threshold.append(0.0)
            left.append(_LEAF)
            right.append(_LEAF)
            value.append(0.0)
            return len(feature) - 1

        # idx: node rows in ascending order; order[k]: the same rows sorted by feature k
        def build(idx, order, depth):
            nonlocal reached
            reached = max(reached, depth)
            node = new_node()
            yn = y[idx]
            mean = yn.mean()
            value[node] = min(max(float(mean), yn.min()), yn.max())
            if depth >= max_depth or idx.shape[0] < min_samples_split:
                return node
            feats = np.sort(rng.choice(p, size=m, replace=False)) if m < p else np.arange(p)
            rows = order[feats]
            xs = Xt[feats[:, None], rows]
            found = _scan_sorted(xs, y[rows] - mean, criterion)
            parent = _node_loss(yn, criterion)
            if found is None or not found[0] < parent * (1 - _TIE_RTOL):
                return node
            _, col, i = found
            f = int(feats[col])
            thr = 0.5 * (xs[col, i] + xs[col, i + 1])
            mask = Xt[f, idx] <= thr
            go_left[idx] = mask
            in_left = go_left[order]
            n_left = int(np.count_nonzero(mask))
            # both children are fixed before recursing, which reuses go_left
            left_order = order[in_left].reshape(p, n_left)
            right_order = order[~in_left].reshape(p, -1)
            feature[node] = f
            threshold[node] = thr
            left[node] = build(idx[mask], left_order, depth + 1)
            right[node] = build(idx[~mask], right_order, depth + 1)
            return node

        build(np.arange(n), np.argsort(X, axis=0, kind="stable").T.copy(), 0)
        return cls(
            np.asarray(feature, dtype=np.intp),
            np.asarray(threshold, dtype=float),
            np.asarray(left, dtype=np.intp),
            np.asarray(right, dtype=np.intp),
            np.asarray(value, dtype=float),
            reached,
        )

    def predict(self, X):
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f != _LEAF
            if not internal.any():
                break
            fi = np.where(internal, f, 0)
            go_left = X[rows, fi] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)
        return self.value[node]


def _tree_rng(seed, b):
    return np.random.default_rng([seed, b])


class RandomForestRegressor(RegressorMixin, BaseEstimator):
    """Bagged regression trees with per-node feature subsampling.

    Parameters
    ----------
    n_trees : int, default=50
    max_depth : int, default=5
    min_samples_split : int, default=2
        Nodes with fewer samples become leaves.
    n_split_features : "all", "sqrt" or int, default="all"
        Number of candidate features drawn at each node.
    seed : int, default=0
    bootstrap : bool, default=True
        Resample rows with replacement for each tree.
    subsample_features : bool, default=True
        When False every node considers all features.
    criterion : {"sse", "mse"}, default="sse"
    """

    def __init__(
        self,
        n_trees=50,
        max_depth=5,
        min_samples_split=2,
        n_split_features="all",
        seed=0,
        bootstrap=True,
        subsample_features=True,
        criterion="sse",
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.n_split_features = n_split_features
        self.seed = seed
        self.bootstrap = bootstrap
        self.subsample_features = subsample_features
        self.criterion = criterion

    @classmethod
    def from_params(cls, params: ForestParams):
        return cls(
            n_trees=params.n_trees,
            max_depth=params.max_depth,
            min_samples_split=params.min_samples_split,
            n_split_features=params.n_split_features,
            seed=params.seed,
            bootstrap=params.bootstrap,
            subsample_features=params.subsample_features,
            criterion=params.criterion,
        )

    @property
    def params(self) -> ForestParams:
        return ForestParams(
            n_trees=self.n_trees,
            max_depth=self.max_depth,
            min_samples_split=self.min_samples_split,
            n_split_features=self.n_split_features,
            seed=self.seed,
            bootstrap=self.bootstrap,
            subsample_features=self.subsample_features,
            criterion=self.criterion,
        )

    def fit(self, X, y):
        params = self.params
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        n, p = X.shape
        if n < 2:
            raise ValueError(f"need at least 2 samples to fit a forest, got {n}")
        m = params.resolve_m(p)
        trees = []
        for b in range(params.n_trees):
            rng = _tree_rng(params.seed, b)
            if params.bootstrap:
                rows = rng.integers(0, n, size=n)
                Xb, yb = X[rows], y[rows]
            else:
                Xb, yb = X, y
            trees.append(
                RegressionTree.grow(
                    Xb,
                    yb,
                    max_depth=params.max_depth,
                    min_samples_split=params.min_samples_split,
                    m=m,
                    criterion=params.criterion,
                    rng=rng,
                )
            )
        self.trees_ = trees
        self.n_features_in_ = p
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, forest was fitted with {self.n_features_in_}"
            )
        preds = np.stack([tree.predict(X) for tree in self.trees_])
        # rounding in the sum must not push the average outside the tree range
        return np.clip(preds.mean(axis=0), preds.min(axis=0), preds.max(axis=0))


def fit_forest(X, y, params: ForestParams) -> RandomForestRegressor:
    return RandomForestRegressor.from_params(params).fit(X, y)


def predict(forest: RandomForestRegressor, X) -> np.ndarray:
    return forest.predict(X)
