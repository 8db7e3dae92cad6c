"""Axis-aligned boxes over datapoints and candidate-split enumeration.

A box is identified by the set of datapoints it contains: two boxes holding
the same points are interchangeable everywhere.  Point sets are therefore the
canonical keys, and are manipulated internally as integer bitmasks (bit i set
means datapoint i is inside).
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .dataset import Dataset


@dataclass(frozen=True)
class PointSet:
    """Sorted, duplicate-free datapoint indices; the identity of a box."""

    indices: tuple[int, ...]

    def __post_init__(self):
        if not self.indices:
            raise ValueError("a point set must be nonempty")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("indices must be strictly increasing")

    @classmethod
    def from_iterable(cls, indices) -> "PointSet":
        return cls(tuple(sorted(set(int(i) for i in indices))))

    @classmethod
    def from_mask(cls, mask: int) -> "PointSet":
        return cls(tuple(mask_to_indices(mask)))

    @cached_property
    def mask(self) -> int:
        return indices_to_mask(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


@dataclass(frozen=True)
class Split:
    """The rule {x_feature < threshold}; the complement routes right."""

    feature: int
    threshold: float


@dataclass(eq=False)
class Box:
    """Per-feature half-open bounds [lo, hi) plus the resident point set.

    Equality and hashing ignore the geometry: boxes compare by point set.
    """

    bounds: tuple[tuple[float, float], ...]
    points: PointSet

    def __eq__(self, other):
        return isinstance(other, Box) and self.points == other.points

    def __hash__(self):
        return hash(self.points)


class Partition(NamedTuple):
    """One equivalence class of splits of a box: its representative rule and
    the two child point-set masks."""

    split: Split
    cut: int
    left: int
    right: int


def indices_to_mask(indices) -> int:
    mask = 0
    for i in indices:
        mask |= 1 << int(i)
    return mask


def mask_to_indices(mask: int) -> list[int]:
    if mask < 0:
        raise ValueError("mask must be non-negative")
    n = mask.bit_length()
    packed = mask.to_bytes((n + 7) // 8, "little")
    bits = np.unpackbits(np.frombuffer(packed, dtype=np.uint8), bitorder="little")
    return np.flatnonzero(bits).tolist()


class SplitIndex:
    """Per-dataset tables for enumerating splits on any point-set mask.

    For each feature: the sorted distinct values, the thresholds halfway
    between consecutive values, per-cut masks of the points strictly below
    each threshold, and per-value masks of the points at that value.
    """

    def __init__(self, data: Dataset):
        n, d = data.features.shape
        self.n = n
        self.d = d
        self.values: list[np.ndarray] = []
        self.thresholds: list[np.ndarray] = []
        self.below: list[list[int]] = []
        self.at_level: list[list[int]] = []
        self.levels = np.empty((n, d), dtype=np.int32)
        for j in range(d):
            col = data.features[:, j]
            vals = np.unique(col)
            self.values.append(vals)
            self.thresholds.append((vals[:-1] + vals[1:]) / 2.0)
            lev = np.searchsorted(vals, col)
            self.levels[:, j] = lev
            self.at_level.append([_mask_from_bool(lev == v) for v in range(len(vals))])
            below_j = []
            acc = 0
            for v in range(len(vals) - 1):
                acc |= self.at_level[j][v]
                below_j.append(acc)
            self.below.append(below_j)

    def full_mask(self) -> int:
        return (1 << self.n) - 1


def _mask_from_bool(flags: np.ndarray) -> int:
    packed = np.packbits(flags.astype(np.uint8), bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


_INDEX_CACHE: "weakref.WeakKeyDictionary[Dataset, SplitIndex]" = weakref.WeakKeyDictionary()


def split_index_for(data: Dataset) -> SplitIndex:
    idx = _INDEX_CACHE.get(data)
    if idx is None:
        idx = SplitIndex(data)
        _INDEX_CACHE[data] = idx
    return idx


def iter_partitions(mask: int, index: SplitIndex) -> list[tuple[int, int, float, int, int]]:
    """Raw partition tuples (feature, cut, threshold, left, right) for ``mask``.

    Thresholds sit halfway between consecutive distinct resident values; the
    cut is the level index of the lower value.  Two splits inducing the same
    left point set are one equivalence class, and the representative with the
    smallest (feature, threshold) is kept.  Output is ordered by (feature,
    threshold).  This is the single source of truth for split enumeration;
    both score kernels and the object-level wrapper below consume it.
    """
    out = []
    seen: set[int] = set()
    for j in range(index.d):
        at = index.at_level[j]
        vals = index.values[j]
        below = index.below[j]
        prev = -1
        for v in range(len(at)):
            if mask & at[v]:
                if prev >= 0:
                    left = mask & below[prev]
                    if left not in seen:
                        seen.add(left)
                        thr = float((vals[prev] + vals[v]) / 2.0)
                        out.append((j, prev, thr, left, mask ^ left))
                prev = v
    return out


def partitions_for_mask(mask: int, index: SplitIndex) -> list[Partition]:
    """``iter_partitions`` wrapped into :class:`Partition` records."""
    return [
        Partition(Split(j, thr), cut, left, right)
        for j, cut, thr, left, right in iter_partitions(mask, index)
    ]


def left_mask_for_cut(mask: int, index: SplitIndex, feature: int, cut: int) -> int:
    """Points of ``mask`` strictly below the cut level on ``feature``."""
    return mask & index.below[feature][cut]


def root_box(data: Dataset) -> Box:
    """The box covering every feature domain and containing all datapoints."""
    n, d = data.features.shape
    bounds = tuple((float("-inf"), float("inf")) for _ in range(d))
    return Box(bounds=bounds, points=PointSet(tuple(range(n))))


def candidate_splits(box: Box, data: Dataset) -> list[Split]:
    """Deduplicated valid splits of ``box``; empty when no bipartition exists."""
    index = split_index_for(data)
    return [p.split for p in partitions_for_mask(box.points.mask, index)]


def apply_split(box: Box, split: Split, data: Dataset) -> tuple[Box, Box]:
    """Partition ``box`` by the rule; errors if either side would be empty."""
    col = data.features[:, split.feature]
    left_idx = [i for i in box.points if col[i] < split.threshold]
    right_idx = [i for i in box.points if col[i] >= split.threshold]
    if not left_idx or not right_idx:
        raise ValueError(f"split {split} does not bipartition the box")
    lo, hi = box.bounds[split.feature]
    if not (lo < split.threshold <= hi):
        raise ValueError(f"split {split} lies outside the box bounds")
    left_bounds = list(box.bounds)
    right_bounds = list(box.bounds)
    left_bounds[split.feature] = (lo, split.threshold)
    right_bounds[split.feature] = (split.threshold, hi)
    return (
        Box(bounds=tuple(left_bounds), points=PointSet(tuple(left_idx))),
        Box(bounds=tuple(right_bounds), points=PointSet(tuple(right_idx))),
    )


def canonical_key(box: Box) -> PointSet:
    """The resident point set; boxes with equal keys are interchangeable."""
    return box.points
