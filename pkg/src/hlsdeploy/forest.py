"""CART regression trees and a bagged forest of them.

Trees are stored as flat arrays (``feature``, ``threshold``, ``left``,
``right``, ``value``) so that prediction is a vectorized walk and the model
serializes to plain lists.  ``feature == -1`` marks a leaf.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

LEAF = -1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    # None -> ceil(sqrt(n_features)); an int caps the features tried per split
    feature_subsample: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.feature_subsample is not None and self.feature_subsample < 1:
            raise ValueError("feature_subsample must be >= 1")

    def features_per_split(self, n_features: int) -> int:
        if self.feature_subsample is None:
            return math.ceil(math.sqrt(n_features))
        return min(self.feature_subsample, n_features)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] != LEAF
        while active.any():
            idx = rows[active]
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active[idx] = self.feature[node[idx]] != LEAF
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        tree = cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )
        n = tree.n_nodes
        if n == 0 or not (len(tree.threshold) == len(tree.left) == len(tree.right)
                          == len(tree.value) == n):
            raise ValueError("tree arrays have inconsistent lengths")
        inner = tree.feature != LEAF
        if inner.any():
            kids = np.concatenate([tree.left[inner], tree.right[inner]])
            if kids.min() <= 0 or kids.max() >= n:
                raise ValueError("tree child index out of range")
        return tree


def _best_split(Xn: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best (column, threshold) over the columns of ``Xn`` by SSE reduction.

    Returns (score, column, threshold) with larger score better, or None when
    no column has a cut leaving ``min_leaf`` samples on both sides.  Ties go
    to the earliest column, then the lowest threshold.
    """
    n = len(y)
    order = Xn.argsort(axis=0, kind="stable")
    cols = np.arange(Xn.shape[1])
    xs = Xn[order, cols]
    csum = y[order].cumsum(axis=0)
    total = csum[-1]
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    s_left = csum[:-1]
    s_right = total - s_left
    # maximizing sum_L^2/n_L + sum_R^2/n_R minimizes the children's SSE
    score = s_left * s_left / n_left + s_right * s_right / (n - n_left)
    valid = xs[1:] != xs[:-1]
    if min_leaf > 1:
        valid[: min_leaf - 1] = False
        valid[n - min_leaf:] = False
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    flat = int(np.argmax(score.T))  # column-major: earliest column wins ties
    col, i = divmod(flat, n - 1)
    lo, hi = float(xs[i, col]), float(xs[i + 1, col])
    thr = 0.5 * (lo + hi)
    if thr >= hi:  # adjacent floats
        thr = lo
    return float(score[i, col]), col, thr


def build_tree(X: np.ndarray, y: np.ndarray, config: ForestConfig,
               rng: np.random.Generator) -> Tree:
    n_features = X.shape[1]
    k = config.features_per_split(n_features)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(v: float) -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(v)
        return len(feature) - 1

    root = new_node(float(y.sum() / len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        if len(idx) < 2 * config.min_leaf or yn.min() == yn.max():
            continue
        if config.max_depth is not None and depth >= config.max_depth:
            continue
        perm = rng.permutation(n_features)
        # try k features; fall back to the rest only if none of them can split
        Xn = X[idx]
        found = _best_split(Xn[:, perm[:k]], yn, config.min_leaf)
        if found is None and k < n_features:
            found = _best_split(Xn[:, perm[k:]], yn, config.min_leaf)
            if found is not None:
                found = (found[0], found[1] + k, found[2])
        if found is None:
            continue
        _, col, thr = found
        f = int(perm[col])
        mask = Xn[:, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(float(y[li].sum() / len(li)))
        right[node] = new_node(float(y[ri].sum() / len(ri)))
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )


def _fit_one(X, y, config, seed_seq):
    rng = np.random.default_rng(seed_seq)
    if config.bootstrap:
        rows = rng.integers(0, len(y), len(y))
        X, y = X[rows], y[rows]
    return build_tree(X, y, config, rng)


def fit_forest(X, y, config: ForestConfig, n_jobs: int = 1) -> list[Tree]:
    """Train ``config.n_trees`` trees.

    Each tree gets its own child of ``SeedSequence(config.seed)``, so the
    result does not depend on ``n_jobs``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per target")
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    if n_jobs == 1:
        return [_fit_one(X, y, config, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = [pool.submit(_fit_one, X, y, config, s) for s in seeds]
        return [f.result() for f in futures]


def predict_forest(trees: list[Tree], X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    acc = np.zeros(len(X))
    for tree in trees:
        acc += tree.predict(X)
    return acc / len(trees)
