"""Trees as grammar derivations over the score table.

Each memoized box doubles as a grammar symbol with two kinds of production:
stop (emit a leaf) or split (rewrite into the two child boxes).  Ratios of
the memoized scores give the production probabilities, and a derivation
sampled this way lands on each tree with exactly its posterior probability.
That one fact powers everything here: whole-tree sampling, lazy path
sampling for queries, the MAP tree from the max-score columns, and an exact
posterior-predictive average computed without enumerating trees.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, isfinite
from typing import Union

import numpy as np

from .boxes import Split
from .errors import TreeParseError
from .score import Hyperparams, MemoTable

__all__ = [
    "Branch",
    "Leaf",
    "Node",
    "RuleDistribution",
    "committee_predict",
    "ensemble_exact_predict",
    "extract_map_tree",
    "leaf_count",
    "leaf_predictive",
    "map_path_predict",
    "node_count",
    "parse_tree",
    "route",
    "rule_distribution",
    "sample_path_predict",
    "sample_tree",
    "sampled_path_average",
    "serialize_tree",
    "tree_leaf_indices",
]


@dataclass(frozen=True)
class Leaf:
    """Terminal node: per-class label counts of its training points."""

    counts: tuple[int, ...]


@dataclass(frozen=True)
class Branch:
    split: Split
    left: "Node"
    right: "Node"


Node = Union[Leaf, Branch]


def node_count(node: Node) -> int:
    if isinstance(node, Leaf):
        return 1
    return 1 + node_count(node.left) + node_count(node.right)


def leaf_count(node: Node) -> int:
    if isinstance(node, Leaf):
        return 1
    return leaf_count(node.left) + leaf_count(node.right)


def route(node: Node, vector) -> Leaf:
    """Walk an encoded feature vector down to its leaf."""
    while isinstance(node, Branch):
        if vector[node.split.feature] < node.split.threshold:
            node = node.left
        else:
            node = node.right
    return node


def tree_leaf_indices(node: Node, data) -> list[list[int]]:
    """Training indices per leaf, in left-to-right leaf order."""
    out: list[list[int]] = []

    def walk(node: Node, indices: list[int]):
        if isinstance(node, Leaf):
            out.append(indices)
            return
        col = data.features[:, node.split.feature]
        left = [i for i in indices if col[i] < node.split.threshold]
        right = [i for i in indices if col[i] >= node.split.threshold]
        walk(node.left, left)
        walk(node.right, right)

    walk(node, list(range(data.point_count)))
    return out


# -- production rules --------------------------------------------------


@dataclass(frozen=True)
class RuleDistribution:
    """Log probabilities of the productions available at one box."""

    stop_logp: float
    split_logps: tuple[float, ...]
    partitions: tuple  # the Partition behind each split probability

    def probabilities(self) -> np.ndarray:
        """Stop first, then each split, as plain probabilities."""
        return np.exp([self.stop_logp, *self.split_logps])


def rule_distribution(key, memo: MemoTable) -> RuleDistribution:
    row = memo.row(key)
    parts = memo.partitions(key)
    log_mass = float(memo.log_mass[row])
    stop = float(memo.log_leaf[row]) - log_mass
    ln_phi = memo.params.ln_phi
    splits = tuple(
        float(memo.log_mass[memo.row(p.left)])
        + float(memo.log_mass[memo.row(p.right)])
        - ln_phi
        - log_mass
        for p in parts
    )
    return RuleDistribution(stop, splits, tuple(parts))


class _Rules:
    """Per-walk cache of sampling-ready rule arrays keyed by box mask."""

    def __init__(self, memo: MemoTable):
        self.memo = memo
        self._cache: dict[int, tuple[float, np.ndarray, tuple]] = {}

    def at(self, mask: int) -> tuple[float, np.ndarray, tuple]:
        got = self._cache.get(mask)
        if got is None:
            dist = rule_distribution(mask, self.memo)
            stop_p = exp(dist.stop_logp)
            cum = np.cumsum([stop_p, *np.exp(dist.split_logps)])
            got = (stop_p, cum, dist.partitions)
            self._cache[mask] = got
        return got


def _pick(cum: np.ndarray, u: float) -> int:
    """Index of the first cumulative bucket above u (clamped to the last)."""
    idx = int(np.searchsorted(cum, u, side="right"))
    return min(idx, len(cum) - 1)


# -- sampling ----------------------------------------------------------


def sample_tree(memo: MemoTable, rng, _rules: _Rules | None = None) -> Node:
    """Draw one tree; the chance of producing T equals T's posterior mass.

    ``rng`` needs only a ``random()`` method returning uniforms in [0, 1).
    """
    rules = _rules if _rules is not None else _Rules(memo)

    def grow(mask: int) -> Node:
        stop_p, cum, parts = rules.at(mask)
        choice = _pick(cum, rng.random())
        if choice == 0:
            return Leaf(tuple(int(c) for c in memo.label_counts(mask)))
        part = parts[choice - 1]
        return Branch(part.split, grow(part.left), grow(part.right))

    return grow(memo.root_mask)


def leaf_predictive(counts, hp: Hyperparams) -> np.ndarray:
    """Posterior-predictive class distribution of a leaf: (n_c+a_c)/(n+sum a)."""
    arr = np.asarray(counts, dtype=np.float64)
    if arr.shape != (len(hp.alpha),):
        raise ValueError(
            f"counts has shape {arr.shape} but alpha has {len(hp.alpha)} entries"
        )
    alpha = np.asarray(hp.alpha)
    return (arr + alpha) / (arr.sum() + alpha.sum())


def _encode_query(memo: MemoTable, query) -> np.ndarray:
    vec = np.asarray(query, dtype=np.float64)
    if vec.shape != (memo.data.feature_count,):
        raise ValueError(
            f"query has shape {vec.shape}; expected ({memo.data.feature_count},)"
        )
    return memo.data.transform_raw(vec[None, :])[0]


def sample_path_predict(
    query,
    memo: MemoTable,
    rng,
    mode: str = "distribution",
    _rules: _Rules | None = None,
):
    """Sample productions only along the query's path; stop emits the answer.

    Equivalent in distribution to sampling a whole tree and routing the
    query, but the off-path subtrees are never materialized.  ``mode`` is
    "distribution" for the full leaf predictive or "label" for one draw
    from it.
    """
    if mode not in ("distribution", "label"):
        raise ValueError(f"unknown mode {mode!r}")
    vec = _encode_query(memo, query)
    rules = _rules if _rules is not None else _Rules(memo)
    mask = memo.root_mask
    while True:
        stop_p, cum, parts = rules.at(mask)
        choice = _pick(cum, rng.random())
        if choice == 0:
            predictive = leaf_predictive(memo.label_counts(mask), memo.params)
            if mode == "distribution":
                return predictive
            return _pick(np.cumsum(predictive), rng.random())
        part = parts[choice - 1]
        mask = part.left if vec[part.split.feature] < part.split.threshold else part.right


def sampled_path_average(query, memo: MemoTable, rng, draws: int) -> np.ndarray:
    """Mean of ``draws`` sampled-path predictive distributions."""
    if draws < 1:
        raise ValueError("draws must be positive")
    rules = _Rules(memo)
    total = np.zeros(memo.data.class_count)
    for _ in range(draws):
        total += sample_path_predict(query, memo, rng, "distribution", _rules=rules)
    return total / draws


def committee_predict(query, memo: MemoTable, rng, trees: int) -> np.ndarray:
    """Average leaf predictive over ``trees`` independently sampled trees."""
    if trees < 1:
        raise ValueError("trees must be positive")
    vec = _encode_query(memo, query)
    rules = _Rules(memo)
    total = np.zeros(memo.data.class_count)
    for _ in range(trees):
        leaf = route(sample_tree(memo, rng, _rules=rules), vec)
        total += leaf_predictive(leaf.counts, memo.params)
    return total / trees


# -- MAP ---------------------------------------------------------------


def map_path_predict(query, memo: MemoTable) -> int:
    """Deterministic label along the best-action path; ties take the leaf
    (and, at the leaf, the smallest class index)."""
    vec = _encode_query(memo, query)
    mask = memo.root_mask
    while True:
        row = memo.row(mask)
        feature = int(memo.best_feature[row])
        if feature < 0:
            predictive = leaf_predictive(memo.label_counts(mask), memo.params)
            return int(np.argmax(predictive))
        left, right = memo.best_children(mask)
        threshold = float(memo.best_threshold[row])
        mask = left if vec[feature] < threshold else right


def extract_map_tree(memo: MemoTable) -> Node:
    """Materialize the tree the best-action columns define."""

    def build(mask: int) -> Node:
        row = memo.row(mask)
        feature = int(memo.best_feature[row])
        if feature < 0:
            return Leaf(tuple(int(c) for c in memo.label_counts(mask)))
        left, right = memo.best_children(mask)
        split = Split(feature, float(memo.best_threshold[row]))
        return Branch(split, build(left), build(right))

    return build(memo.root_mask)


# -- exact ensemble predictive ----------------------------------------


def ensemble_exact_predict(query, memo: MemoTable) -> np.ndarray:
    """Posterior-weighted predictive over every supported tree, exactly.

    Let W(N) be the per-class vector summing, over all subtrees rooted at N,
    the subtree's weight times the predictive of the leaf that captures the
    query.  Then W(N) = L(N) * predictive(N) + (1/phi) * sum over splits of
    Q(child away from query) * W(child containing query), because the away
    subtree is free to be anything (contributing its whole score) while the
    toward side recurses.  The answer is W(root) / Q(root).  Computed per
    class in log space.
    """
    vec = _encode_query(memo, query)
    ln_phi = memo.params.ln_phi
    cache: dict[int, np.ndarray] = {}

    def log_w(mask: int) -> np.ndarray:
        got = cache.get(mask)
        if got is not None:
            return got
        row = memo.row(mask)
        predictive = leaf_predictive(memo.label_counts(mask), memo.params)
        acc = float(memo.log_leaf[row]) + np.log(predictive)
        for part in memo.partitions(mask):
            if vec[part.split.feature] < part.split.threshold:
                toward, away = part.left, part.right
            else:
                toward, away = part.right, part.left
            shift = float(memo.log_mass[memo.row(away)]) - ln_phi
            acc = np.logaddexp(acc, shift + log_w(toward))
        cache[mask] = acc
        return acc

    root_row = memo.row(memo.root_mask)
    return np.exp(log_w(memo.root_mask) - float(memo.log_mass[root_row]))


# -- text format -------------------------------------------------------
#
# Canonical s-expressions, single spaces, no newlines:
#   (leaf 3 1)
#   (node f=0 t=0.5 (leaf 1 0) (leaf 0 1))
# Thresholds use repr(), the shortest decimal that round-trips the float.


def serialize_tree(node: Node) -> str:
    if isinstance(node, Leaf):
        return "(leaf " + " ".join(str(c) for c in node.counts) + ")"
    return (
        f"(node f={node.split.feature} t={node.split.threshold!r} "
        f"{serialize_tree(node.left)} {serialize_tree(node.right)})"
    )


class _Tokens:
    """Tokenizer tracking line and column for error messages."""

    def __init__(self, text: str):
        self.tokens: list[tuple[str, int, int]] = []
        line, col = 1, 1
        current = ""
        start = (1, 1)
        for ch in text:
            if ch in "() \t\n":
                if current:
                    self.tokens.append((current, *start))
                    current = ""
                if ch in "()":
                    self.tokens.append((ch, line, col))
            else:
                if not current:
                    start = (line, col)
                current += ch
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
        if current:
            self.tokens.append((current, *start))
        self.pos = 0
        self.end = (line, col)

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        if tok is None:
            raise TreeParseError("unexpected end of input", *self.end)
        self.pos += 1
        return tok


def parse_tree(text: str) -> Node:
    """Inverse of serialize_tree; tolerant of extra whitespace."""
    tokens = _Tokens(text)
    node = _parse_node(tokens)
    trailing = tokens.peek()
    if trailing is not None:
        raise TreeParseError(
            f"trailing content {trailing[0]!r}", trailing[1], trailing[2]
        )
    _check_arity(node, None)
    return node


def _parse_node(tokens: _Tokens) -> Node:
    tok, line, col = tokens.next()
    if tok != "(":
        raise TreeParseError(f"expected '(', found {tok!r}", line, col)
    head, line, col = tokens.next()
    if head == "leaf":
        counts = []
        while True:
            tok, line, col = tokens.next()
            if tok == ")":
                break
            if tok == "(":
                raise TreeParseError("unexpected '(' inside leaf", line, col)
            try:
                value = int(tok)
            except ValueError:
                raise TreeParseError(f"bad leaf count {tok!r}", line, col) from None
            if value < 0:
                raise TreeParseError(f"negative leaf count {tok!r}", line, col)
            counts.append(value)
        if len(counts) < 2:
            raise TreeParseError("a leaf needs at least two class counts", line, col)
        return Leaf(tuple(counts))
    if head == "node":
        feature = _parse_field(tokens, "f", int)
        threshold = _parse_field(tokens, "t", float)
        if feature < 0:
            raise TreeParseError(f"negative feature index {feature}", line, col)
        if not isfinite(threshold):
            raise TreeParseError(f"non-finite threshold {threshold}", line, col)
        left = _parse_node(tokens)
        right = _parse_node(tokens)
        tok, line, col = tokens.next()
        if tok != ")":
            raise TreeParseError(f"expected ')', found {tok!r}", line, col)
        return Branch(Split(feature, threshold), left, right)
    raise TreeParseError(f"expected 'leaf' or 'node', found {head!r}", line, col)


def _parse_field(tokens: _Tokens, name: str, cast):
    tok, line, col = tokens.next()
    prefix = name + "="
    if not tok.startswith(prefix):
        raise TreeParseError(f"expected {prefix}..., found {tok!r}", line, col)
    try:
        return cast(tok[len(prefix) :])
    except ValueError:
        raise TreeParseError(f"bad {name} value in {tok!r}", line, col) from None


def _check_arity(node: Node, expected: int | None) -> int:
    """All leaves must agree on the number of classes."""
    if isinstance(node, Leaf):
        if expected is not None and len(node.counts) != expected:
            raise TreeParseError(
                f"leaf arity {len(node.counts)} does not match {expected}", 1, 1
            )
        return len(node.counts)
    expected = _check_arity(node.left, expected)
    return _check_arity(node.right, expected)
