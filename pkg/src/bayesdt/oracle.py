"""Brute-force ground truth for tiny datasets.

Enumerates every tree the constraints allow — one representative per split
equivalence class, via the same candidate machinery the engine uses — and
weighs each by its unnormalized posterior: the product of its leaf
likelihoods times the per-leaf size penalty.  Everything the fast engine
computes cleverly, this module computes the slow, obviously-correct way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Split, iter_partitions, split_index_for
from .dataset import Dataset
from .errors import EnumerationCapExceeded
from .grammar import Branch, Leaf, Node, leaf_predictive, route, serialize_tree
from .score import Hyperparams, log_leaf_likelihood

DEFAULT_TREE_CAP = 1_000_000


@dataclass(frozen=True)
class WeightedTree:
    tree: Node
    log_weight: float


def tree_log_weight(node: Node, hp: Hyperparams) -> float:
    """Log unnormalized posterior of one tree: sum of leaf likelihoods minus
    ln(phi) per leaf."""
    if isinstance(node, Leaf):
        return log_leaf_likelihood(node.counts, hp) - hp.ln_phi
    return tree_log_weight(node.left, hp) + tree_log_weight(node.right, hp)


def count_trees(data: Dataset, max_trees: int = DEFAULT_TREE_CAP) -> int:
    """Number of distinct valid trees: t(N) = 1 + sum of t(left)*t(right).

    Raises when the count passes ``max_trees`` (counts can explode long
    before enumeration would).
    """
    index = split_index_for(data)
    cache: dict[int, int] = {}

    def count(mask: int) -> int:
        got = cache.get(mask)
        if got is not None:
            return got
        total = 1
        for _, _, _, left, right in iter_partitions(mask, index):
            total += count(left) * count(right)
            if total > max_trees:
                raise EnumerationCapExceeded(
                    f"tree count exceeds the cap of {max_trees}"
                )
        cache[mask] = total
        return total

    return count((1 << data.point_count) - 1)


def enumerate_trees(
    data: Dataset, hp: Hyperparams, max_trees: int = DEFAULT_TREE_CAP
) -> list[WeightedTree]:
    """Every valid tree with its log posterior weight, in derivation order."""
    count_trees(data, max_trees)  # fail fast before building anything
    index = split_index_for(data)
    class_labels = data.labels
    cache: dict[int, list[tuple[Node, float]]] = {}

    def counts_of(mask: int) -> tuple[int, ...]:
        idx = [i for i in range(data.point_count) if mask >> i & 1]
        return tuple(
            int(np.sum(class_labels[idx] == c)) for c in range(data.class_count)
        )

    def trees(mask: int) -> list[tuple[Node, float]]:
        got = cache.get(mask)
        if got is not None:
            return got
        # the lone leaf: weight = L * phi^-1 (one terminal node)
        leaf_w = log_leaf_likelihood(counts_of(mask), hp) - hp.ln_phi
        out: list[tuple[Node, float]] = [(Leaf(counts_of(mask)), leaf_w)]
        for feature, _, threshold, left, right in iter_partitions(mask, index):
            split = Split(feature, threshold)
            for left_node, left_w in trees(left):
                for right_node, right_w in trees(right):
                    out.append((Branch(split, left_node, right_node), left_w + right_w))
        cache[mask] = out
        return out

    root = (1 << data.point_count) - 1
    return [WeightedTree(node, w) for node, w in trees(root)]


def oracle_posterior(
    data: Dataset, hp: Hyperparams, max_trees: int = DEFAULT_TREE_CAP
) -> dict[str, float]:
    """Normalized posterior over serialized trees, sorted by tree text."""
    weighted = enumerate_trees(data, hp, max_trees)
    logs = np.array([w.log_weight for w in weighted])
    probs = np.exp(logs - logs.max())
    probs /= probs.sum()
    items = sorted(zip((serialize_tree(w.tree) for w in weighted), probs))
    return dict(items)


def oracle_predictive(
    query, data: Dataset, hp: Hyperparams, max_trees: int = DEFAULT_TREE_CAP
) -> np.ndarray:
    """Posterior-weighted leaf predictive at ``query``, by full enumeration."""
    vec = np.asarray(query, dtype=np.float64)
    if vec.shape != (data.feature_count,):
        raise ValueError(
            f"query has shape {vec.shape}; expected ({data.feature_count},)"
        )
    encoded = data.transform_raw(vec[None, :])[0]
    weighted = enumerate_trees(data, hp, max_trees)
    logs = np.array([w.log_weight for w in weighted])
    probs = np.exp(logs - logs.max())
    probs /= probs.sum()
    answer = np.zeros(data.class_count)
    for weight, wt in zip(probs, weighted):
        leaf = route(wt.tree, encoded)
        answer += weight * leaf_predictive(leaf.counts, hp)
    return answer
