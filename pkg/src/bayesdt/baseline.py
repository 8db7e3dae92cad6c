"""Greedy-tree baselines and shared evaluation metrics.

CART grows a tree top-down, at each node taking the single split with the
largest Gini impurity decrease; the random forest bags bootstrap resamples
of that procedure with per-split feature subsampling and majority voting.
Both emit the same tree nodes as the posterior engine, so sizes and
serializations are directly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np
from scipy import stats

from .boxes import Split
from .dataset import Dataset
from .grammar import Branch, Leaf, Node, route


@dataclass(frozen=True)
class BaselineParams:
    """Knobs for the greedy baselines, defaulting to the usual conventions:
    unlimited depth, split any node with 2+ points, 100 bagged trees, and
    sqrt(d)-of-d feature subsampling for the forest."""

    max_depth: int | None = None
    min_samples_split: int = 2
    tree_count: int = 100
    feature_subsample: float | None = None  # None means sqrt(d)/d
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be at least 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be at least 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.feature_subsample is not None and not (
            0.0 < self.feature_subsample <= 1.0
        ):
            raise ValueError("feature_subsample must be in (0, 1]")

    def features_per_split(self, d: int) -> int:
        fraction = self.feature_subsample
        if fraction is None:
            return max(1, int(round(sqrt(d))))
        return max(1, int(round(fraction * d)))


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _grow(data: Dataset, indices: np.ndarray, params: BaselineParams, depth: int,
          feature_pool) -> Node:
    labels = data.labels[indices]
    counts = np.bincount(labels, minlength=data.class_count)
    node_gini = _gini(counts)
    stop = (
        node_gini == 0.0
        or len(indices) < params.min_samples_split
        or (params.max_depth is not None and depth >= params.max_depth)
    )
    best = None
    if not stop:
        n_here = len(indices)
        for j in feature_pool():
            col = data.features[indices, j]
            vals = np.unique(col)
            for lo, hi in zip(vals, vals[1:]):
                thr = float((lo + hi) / 2.0)
                left = col < thr
                left_counts = np.bincount(labels[left], minlength=data.class_count)
                right_counts = counts - left_counts
                n_left = int(left_counts.sum())
                weighted = (
                    n_left * _gini(left_counts)
                    + (n_here - n_left) * _gini(right_counts)
                ) / n_here
                decrease = node_gini - weighted
                # strict improvement required; first-best wins ties, and the
                # candidate order (feature, threshold) makes that deterministic
                if decrease > 0.0 and (best is None or decrease > best[0]):
                    best = (decrease, j, thr, left)
    if best is None:
        return Leaf(tuple(int(c) for c in counts))
    _, j, thr, left = best
    return Branch(
        Split(j, thr),
        _grow(data, indices[left], params, depth + 1, feature_pool),
        _grow(data, indices[~left], params, depth + 1, feature_pool),
    )


def cart_train(data: Dataset, params: BaselineParams | None = None) -> Node:
    """Greedy Gini tree over all features; deterministic, no randomness."""
    params = params or BaselineParams()
    all_features = np.arange(data.feature_count)
    return _grow(
        data, np.arange(data.point_count), params, 0, lambda: all_features
    )


def rf_train(data: Dataset, params: BaselineParams | None = None) -> list[Node]:
    """Bootstrap-bagged greedy trees with per-split feature subsampling."""
    params = params or BaselineParams()
    rng = np.random.default_rng(params.seed)
    k = params.features_per_split(data.feature_count)
    n = data.point_count
    trees = []
    for _ in range(params.tree_count):
        if params.bootstrap:
            indices = np.sort(rng.integers(0, n, size=n))
        else:
            indices = np.arange(n)
        if k >= data.feature_count:
            pool = lambda: np.arange(data.feature_count)
        else:
            pool = lambda: np.sort(rng.choice(data.feature_count, size=k, replace=False))
        trees.append(_grow(data, indices, params, 0, pool))
    return trees


def tree_predict(node: Node, vector) -> int:
    """Majority label of the routed leaf (smallest class index on ties)."""
    return int(np.argmax(route(node, vector).counts))


def forest_predict(trees: list[Node], vector, class_count: int) -> int:
    votes = np.zeros(class_count, dtype=np.int64)
    for tree in trees:
        votes[tree_predict(tree, vector)] += 1
    return int(np.argmax(votes))


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    correct: int
    total: int


def evaluate(predict_fn, data: Dataset, indices) -> EvalResult:
    """Accuracy of ``predict_fn(feature_vector) -> label`` on a test split."""
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ValueError("empty test split")
    correct = sum(
        1 for i in indices if predict_fn(data.features[i]) == data.labels[i]
    )
    return EvalResult(correct / indices.size, correct, int(indices.size))


def mean_ci95(values) -> tuple[float, float]:
    """Mean and 95% t-interval half-width; half-width is 0 for one value."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no values")
    if arr.size == 1:
        return float(arr[0]), 0.0
    half = float(
        stats.t.ppf(0.975, arr.size - 1) * arr.std(ddof=1) / sqrt(arr.size)
    )
    return float(arr.mean()), half
