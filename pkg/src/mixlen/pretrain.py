"""Least-squares gradient-boosted regression trees, averaged over seeds.

The fitted :class:`GradientBoostingEnsemble` is the point regressor that
conditions the diffusion model.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConfigError, FitError, ModelFormatError

FORMAT_NAME = "mixlen-gbdt"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class GbdtParams:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    subsample: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ConfigError("n_trees, max_depth and min_samples_leaf must all be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError(f"learning_rate must lie in (0, 1], got {self.learning_rate!r}")
        if not 0 < self.subsample <= 1:
            raise ConfigError(f"subsample must lie in (0, 1], got {self.subsample!r}")


class RegressionTree:
    """Binary axis-aligned tree stored as flat node arrays.

    Node ``i`` is a leaf when ``feature[i] == -1``; otherwise rows with
    ``x[feature[i]] <= threshold[i]`` go to ``left[i]``.
    """

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))

    @property
    def depth(self):
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active[rows] = self.feature[node[rows]] >= 0
        return node

    def predict(self, X):
        return self.value[self.apply(X)]

    def to_tuples(self):
        return [
            [int(f), float(t), int(l), int(r), float(v)]
            for f, t, l, r, v in zip(self.feature, self.threshold, self.left, self.right, self.value)
        ]

    @classmethod
    def from_tuples(cls, rows):
        if not rows:
            raise ModelFormatError("tree has no nodes")
        f, t, l, r, v = zip(*rows)
        return cls(f, t, l, r, v)


def _sorted_mean(y):
    # summing in sorted order keeps the result independent of row order
    return float(np.sum(np.sort(y)) / len(y))


def _best_split(X, y, min_samples_leaf):
    n, n_features = X.shape
    total = np.sum(np.sort(y))
    parent = total * total / n
    best = None  # (gain, feature, threshold)
    n_left = np.arange(1, n)
    n_right = n - n_left
    for j in range(n_features):
        order = np.lexsort((y, X[:, j]))
        xs, ys = X[order, j], y[order]
        cs = np.cumsum(ys)[:-1]
        valid = (xs[:-1] < xs[1:]) & (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
        if not valid.any():
            continue
        score = cs**2 / n_left + (total - cs) ** 2 / n_right
        score = np.where(valid, score, -np.inf)
        k = int(np.argmax(score))
        if best is None or score[k] > best[0]:
            best = (score[k], j, 0.5 * (xs[k] + xs[k + 1]))
    if best is None or best[0] - parent <= 1e-12 * max(abs(parent), 1.0):
        return None
    return best[1], best[2]


def fit_tree(X, residuals, max_depth=3, min_samples_leaf=1):
    """Grow a least-squares tree by exhaustive greedy split search.

    Candidate thresholds are midpoints between consecutive distinct values of
    each feature. Ties in split quality go to the lowest feature index, then
    the lowest threshold, so the result does not depend on row order.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(residuals, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ValueError("X must be 2-D with one row per residual")
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(_sorted_mean(y[idx]))
        if depth >= max_depth or len(idx) < 2 * min_samples_leaf:
            return node
        found = _best_split(X[idx], y[idx], min_samples_leaf)
        if found is None:
            return node
        j, thr = found
        mask = X[idx, j] <= thr
        feature[node] = j
        threshold[node] = thr
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return RegressionTree(feature, threshold, left, right, value)


class BoostedModel:
    """One boosting chain: ``base + learning_rate * sum(tree(x))``."""

    def __init__(self, base, trees, learning_rate):
        self.base = float(base)
        self.trees = list(trees)
        self.learning_rate = float(learning_rate)

    def staged_predict(self, X):
        out = np.full(len(X), self.base)
        for tree in self.trees:
            out = out + self.learning_rate * tree.predict(X)
            yield out

    def predict(self, X, n_trees=None):
        trees = self.trees if n_trees is None else self.trees[:n_trees]
        out = np.full(len(X), self.base)
        for tree in trees:
            out = out + self.learning_rate * tree.predict(X)
        return out


def _fit_member(X, y, params: GbdtParams, seed):
    rng = np.random.default_rng(seed)
    n = len(y)
    base = _sorted_mean(y)
    current = np.full(n, base)
    trees = []
    n_sub = max(1, int(round(params.subsample * n)))
    for _ in range(params.n_trees):
        resid = y - current
        if params.subsample < 1:
            idx = np.sort(rng.choice(n, size=n_sub, replace=False))
        else:
            idx = np.arange(n)
        tree = fit_tree(X[idx], resid[idx], params.max_depth, params.min_samples_leaf)
        trees.append(tree)
        current = current + params.learning_rate * tree.predict(X)
    return BoostedModel(base, trees, params.learning_rate)


class GradientBoostingEnsemble(RegressorMixin, BaseEstimator):
    """Average of ``n_members`` seed-varied least-squares boosted tree models.

    Parameters
    ----------
    n_trees : int, default=200
        Boosting rounds per member.
    max_depth : int, default=3
    learning_rate : float, default=0.1
        Shrinkage applied to every tree, in (0, 1].
    min_samples_leaf : int, default=5
    subsample : float, default=0.9
        Fraction of rows drawn without replacement for each boosting round.
        Members differ only through these draws.
    n_members : int, default=5
    random_state : int, default=0
    """

    def __init__(self, n_trees=200, max_depth=3, learning_rate=0.1, min_samples_leaf=5,
                 subsample=0.9, n_members=5, random_state=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.subsample = subsample
        self.n_members = n_members
        self.random_state = random_state

    def _params(self):
        return GbdtParams(self.n_trees, self.max_depth, self.learning_rate,
                          self.min_samples_leaf, self.subsample, self.random_state)

    def fit(self, X, y):
        if len(np.atleast_1d(y)) == 0:
            raise FitError("cannot fit on an empty dataset")
        X, y = check_X_y(X, y, y_numeric=True)
        if self.n_members < 1:
            raise ConfigError("n_members must be >= 1")
        params = self._params()
        seeds = np.random.SeedSequence(self.random_state).spawn(self.n_members)
        self.members_ = [_fit_member(X, y, params, s) for s in seeds]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "members_")
        X = check_array(X)
        return np.mean([m.predict(X) for m in self.members_], axis=0)

    def staged_predict(self, X):
        """Ensemble prediction after each boosting round."""
        check_is_fitted(self, "members_")
        X = check_array(X)
        for stage in zip(*(m.staged_predict(X) for m in self.members_)):
            yield np.mean(stage, axis=0)

    @classmethod
    def from_members(cls, members, **params):
        est = cls(n_members=len(members), **params)
        est.members_ = list(members)
        return est

    def to_dict(self):
        check_is_fitted(self, "members_")
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "params": {**asdict(self._params()), "n_members": self.n_members},
            "n_features": self.n_features_in_,
            "members": [
                {
                    "base": m.base,
                    "learning_rate": m.learning_rate,
                    "trees": [t.to_tuples() for t in m.trees],
                }
                for m in self.members_
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != FORMAT_NAME:
            raise ModelFormatError(f"not a {FORMAT_NAME} document")
        if doc.get("version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported version {doc.get('version')!r}")
        p = dict(doc["params"])
        est = cls(n_trees=p["n_trees"], max_depth=p["max_depth"], learning_rate=p["learning_rate"],
                  min_samples_leaf=p["min_samples_leaf"], subsample=p["subsample"],
                  n_members=p["n_members"], random_state=p["seed"])
        est.members_ = [
            BoostedModel(m["base"], [RegressionTree.from_tuples(t) for t in m["trees"]], m["learning_rate"])
            for m in doc["members"]
        ]
        est.n_features_in_ = int(doc["n_features"])
        return est

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: {exc}") from None
        return cls.from_dict(doc)
