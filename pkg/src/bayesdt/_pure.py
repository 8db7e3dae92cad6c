"""Pure-Python score kernel.

Fallback implementation of the box-score dynamic program, used when the
compiled extension is unavailable (or explicitly requested).  Point sets are
Python big-int bitmasks.  The arithmetic here — table lookups, accumulation
order, log-sum-exp shape — is mirrored statement for statement by the
compiled kernel so that both produce bit-identical tables.
"""

from __future__ import annotations

from math import exp, log, nan

from .boxes import SplitIndex, iter_partitions
from .errors import MemoCapExceeded


def run_dp(
    index: SplitIndex,
    class_masks: list[int],
    table_a: list[list[float]],
    table_b: list[float],
    ln_phi: float,
    memo_cap: int,
):
    """Resolve every box reachable from the full point set.

    ``table_a[c][k]`` and ``table_b[k]`` are the precomputed log-gamma
    differences for per-class and total counts.  Returns the masks in
    resolution order, the mask->row map, the six per-row columns, and a
    ``(entries, max_stack_depth, child_lookups, child_hits)`` stats tuple.
    """
    n_classes = len(class_masks)
    index_of: dict[int, int] = {}
    masks: list[int] = []
    col_leaf: list[float] = []
    col_mass: list[float] = []
    col_best: list[float] = []
    col_feature: list[int] = []
    col_cut: list[int] = []
    col_threshold: list[float] = []

    stack: list[tuple[int, list | None]] = [(index.full_mask(), None)]
    max_depth = 1
    lookups = 0
    hits = 0

    while stack:
        mask, parts = stack.pop()
        if mask in index_of:
            continue
        if parts is None:
            # First visit: schedule unresolved children beneath a deferred
            # frame.  LIFO order resolves them all before it resurfaces.
            parts = iter_partitions(mask, index)
            stack.append((mask, parts))
            for _, _, _, left, right in parts:
                lookups += 2
                if left in index_of:
                    hits += 1
                else:
                    stack.append((left, None))
                if right in index_of:
                    hits += 1
                else:
                    stack.append((right, None))
            if len(stack) > max_depth:
                max_depth = len(stack)
            continue

        acc = 0.0
        for c in range(n_classes):
            acc += table_a[c][(mask & class_masks[c]).bit_count()]
        log_leaf = acc - table_b[mask.bit_count()]

        if parts:
            best = log_leaf
            best_feature = -1
            best_cut = -1
            best_threshold = nan
            high = log_leaf
            terms = []
            for feature, cut, threshold, left, right in parts:
                row_l = index_of[left]
                row_r = index_of[right]
                term = col_mass[row_l] + col_mass[row_r] - ln_phi
                terms.append(term)
                if term > high:
                    high = term
                cand = col_best[row_l] + col_best[row_r] - ln_phi
                if cand > best:
                    best = cand
                    best_feature = feature
                    best_cut = cut
                    best_threshold = threshold
            total = exp(log_leaf - high)
            for term in terms:
                total += exp(term - high)
            log_mass = high + log(total)
        else:
            log_mass = log_leaf
            best = log_leaf
            best_feature = -1
            best_cut = -1
            best_threshold = nan

        if len(masks) >= memo_cap:
            raise MemoCapExceeded(
                f"memo table exceeded the configured cap of {memo_cap} entries"
            )
        index_of[mask] = len(masks)
        masks.append(mask)
        col_leaf.append(log_leaf)
        col_mass.append(log_mass)
        col_best.append(best)
        col_feature.append(best_feature)
        col_cut.append(best_cut)
        col_threshold.append(best_threshold)

    stats = (len(masks), max_depth, lookups, hits)
    return (
        masks,
        index_of,
        col_leaf,
        col_mass,
        col_best,
        col_feature,
        col_cut,
        col_threshold,
        stats,
    )
