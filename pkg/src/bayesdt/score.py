"""Leaf likelihoods and the memoized box-score dynamic program.

For every box (canonically keyed by its resident point set) the table holds
three log-space quantities:

* ``log_leaf`` — the marginal likelihood of the box's labels as one leaf,
  a Dirichlet-multinomial evidence term;
* ``log_mass`` — the summed weight of every decision (sub)tree that could be
  grown inside the box, each tree contributing its leaf likelihoods times an
  exponential penalty per leaf;
* ``log_best`` — the same recursion with the sum replaced by max: the weight
  of the single best subtree, along with the action achieving it.

``log_mass`` of the root is, up to one factor of the penalty, the posterior
normalizing constant; ratios of these quantities later become production-rule
probabilities, so getting them exactly right is the whole ballgame.
"""

from __future__ import annotations

import json
import os
import struct
import threading
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
from scipy.special import gammaln

from . import _pure
from .boxes import (
    Partition,
    PointSet,
    Split,
    SplitIndex,
    indices_to_mask,
    left_mask_for_cut,
    partitions_for_mask,
    split_index_for,
)
from .dataset import Dataset
from .errors import MemoFormatError

try:
    from . import _core
except ImportError:  # extension not built; pure kernel takes over
    _core = None

DEFAULT_MEMO_CAP = 10_000_000

MEMO_MAGIC = b"BDTM"
MEMO_VERSION = 1

Key = Union[PointSet, int]


def compiled_available() -> bool:
    return _core is not None


def default_backend() -> str:
    """"compiled" when the extension is importable, unless BAYESDT_PURE is set."""
    if os.environ.get("BAYESDT_PURE", "").strip() not in ("", "0"):
        return "pure"
    return "compiled" if _core is not None else "pure"


@dataclass(frozen=True)
class Hyperparams:
    """Dirichlet pseudo-counts per class and the log size penalty."""

    alpha: tuple[float, ...]
    ln_phi: float = 2.0

    def __post_init__(self):
        if len(self.alpha) == 0:
            raise ValueError("alpha must have one entry per class")
        if any(not (a > 0) for a in self.alpha):
            raise ValueError("all alpha entries must be positive")
        if not np.isfinite(self.ln_phi):
            raise ValueError("ln_phi must be finite")

    @classmethod
    def for_classes(cls, class_count: int, alpha=1.0, ln_phi: float = 2.0) -> "Hyperparams":
        """Broadcast a scalar alpha, or validate a per-class vector."""
        if np.isscalar(alpha):
            vec = (float(alpha),) * class_count
        else:
            vec = tuple(float(a) for a in alpha)
            if len(vec) != class_count:
                raise ValueError(
                    f"alpha has {len(vec)} entries but the dataset has {class_count} classes"
                )
        return cls(alpha=vec, ln_phi=float(ln_phi))


def log_beta(gamma) -> float:
    """Log of the multivariate beta function, sum(lgamma) - lgamma(sum)."""
    arr = np.asarray(gamma, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a nonempty vector")
    if np.any(arr <= 0):
        raise ValueError("all entries must be positive")
    return float(np.sum(gammaln(arr)) - gammaln(np.sum(arr)))


def log_leaf_likelihood(counts, hp: Hyperparams) -> float:
    """Log marginal likelihood of a leaf's labels under the Dirichlet prior."""
    arr = np.asarray(counts, dtype=np.float64)
    if arr.shape != (len(hp.alpha),):
        raise ValueError(
            f"counts has shape {arr.shape} but alpha has {len(hp.alpha)} entries"
        )
    if np.any(arr < 0):
        raise ValueError("counts must be non-negative")
    alpha = np.asarray(hp.alpha)
    return log_beta(arr + alpha) - log_beta(alpha)


def leaf_count_tables(hp: Hyperparams, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Precompute log-gamma differences for counts 0..n.

    ``table_a[c][k] = lgamma(k + alpha_c) - lgamma(alpha_c)`` and
    ``table_b[k] = lgamma(k + sum(alpha)) - lgamma(sum(alpha))``, so that a
    leaf's log likelihood is ``sum_c table_a[c][k_c] - table_b[k_total]``.
    Both kernels read these same tables, which keeps them bit-identical.
    """
    ks = np.arange(n + 1, dtype=np.float64)
    table_a = np.vstack([gammaln(ks + a) - gammaln(a) for a in hp.alpha])
    total = float(sum(hp.alpha))
    table_b = gammaln(ks + total) - gammaln(total)
    return table_a, table_b


class MemoEntry(NamedTuple):
    log_leaf: float
    log_mass: float
    log_best: float
    best_action: Split | None


@dataclass(frozen=True)
class MemoStats:
    entry_count: int
    max_stack_depth: int
    child_lookups: int
    child_hits: int
    backend: str

    @property
    def hit_rate(self) -> float:
        return self.child_hits / self.child_lookups if self.child_lookups else 0.0


class MemoTable:
    """Immutable result of the score DP, columnar, keyed by point-set mask.

    Rows appear in resolution order (children before parents, root last).
    Candidate partitions per box are re-derived lazily and cached under a
    lock, so concurrent readers see each partition list computed once.
    """

    def __init__(
        self,
        data: Dataset,
        params: Hyperparams,
        masks: list[int],
        index_of: dict[int, int],
        log_leaf: np.ndarray,
        log_mass: np.ndarray,
        log_best: np.ndarray,
        best_feature: np.ndarray,
        best_cut: np.ndarray,
        best_threshold: np.ndarray,
        stats: MemoStats,
    ):
        self.data = data
        self.params = params
        self.masks = masks
        self.index_of = index_of
        self.log_leaf = log_leaf
        self.log_mass = log_mass
        self.log_best = log_best
        self.best_feature = best_feature
        self.best_cut = best_cut
        self.best_threshold = best_threshold
        self.stats = stats
        self.root_mask = masks[-1]
        self._partitions: dict[int, list[Partition]] = {}
        self._lock = threading.Lock()

    # -- key handling -------------------------------------------------

    @staticmethod
    def mask_of(key: Key) -> int:
        return key if isinstance(key, int) else key.mask

    @property
    def root_key(self) -> PointSet:
        return PointSet.from_mask(self.root_mask)

    def row(self, key: Key) -> int:
        mask = self.mask_of(key)
        try:
            return self.index_of[mask]
        except KeyError:
            raise KeyError(f"point set not present in the memo table: {mask:#x}") from None

    def __contains__(self, key: Key) -> bool:
        return self.mask_of(key) in self.index_of

    def __len__(self) -> int:
        return len(self.masks)

    # -- entry access -------------------------------------------------

    def entry_at(self, row: int) -> MemoEntry:
        feature = int(self.best_feature[row])
        action = None if feature < 0 else Split(feature, float(self.best_threshold[row]))
        return MemoEntry(
            float(self.log_leaf[row]),
            float(self.log_mass[row]),
            float(self.log_best[row]),
            action,
        )

    def entry(self, key: Key) -> MemoEntry:
        return self.entry_at(self.row(key))

    def best_children(self, key: Key) -> tuple[int, int] | None:
        """Child masks of the best action, or None when the best is a leaf."""
        row = self.row(key)
        feature = int(self.best_feature[row])
        if feature < 0:
            return None
        mask = self.mask_of(key)
        left = left_mask_for_cut(mask, self.split_index, feature, int(self.best_cut[row]))
        return left, mask ^ left

    @property
    def split_index(self) -> SplitIndex:
        return split_index_for(self.data)

    def partitions(self, key: Key) -> list[Partition]:
        mask = self.mask_of(key)
        if mask not in self.index_of:
            raise KeyError(f"point set not present in the memo table: {mask:#x}")
        with self._lock:
            parts = self._partitions.get(mask)
            if parts is None:
                parts = partitions_for_mask(mask, self.split_index)
                self._partitions[mask] = parts
        return parts

    def label_counts(self, key: Key) -> np.ndarray:
        """Per-class label counts of the points in ``key``."""
        mask = self.mask_of(key)
        counts = np.zeros(self.data.class_count, dtype=np.int64)
        for c, cmask in enumerate(_class_masks(self.data)):
            counts[c] = (mask & cmask).bit_count()
        return counts


def _class_masks(data: Dataset) -> list[int]:
    masks = getattr(data, "_class_masks_cache", None)
    if masks is None:
        masks = [
            indices_to_mask(np.flatnonzero(data.labels == c))
            for c in range(data.class_count)
        ]
        object.__setattr__(data, "_class_masks_cache", masks)
    return masks


def compute_scores(
    data: Dataset,
    hp: Hyperparams,
    *,
    memo_cap: int = DEFAULT_MEMO_CAP,
    backend: str | None = None,
) -> MemoTable:
    """Run the DP over every box reachable from the root by valid splits.

    ``backend`` is "compiled", "pure", or None for the default (compiled when
    built, overridable via the BAYESDT_PURE environment variable).
    """
    if len(hp.alpha) != data.class_count:
        raise ValueError(
            f"alpha has {len(hp.alpha)} entries but the dataset has "
            f"{data.class_count} classes"
        )
    if memo_cap < 1:
        raise ValueError("memo_cap must be positive")
    chosen = backend or default_backend()
    if chosen not in ("pure", "compiled"):
        raise ValueError(f"unknown backend {chosen!r}")
    if chosen == "compiled" and _core is None:
        raise RuntimeError("compiled backend requested but the extension is not built")

    index = split_index_for(data)
    class_masks = _class_masks(data)
    table_a, table_b = leaf_count_tables(hp, data.point_count)

    if chosen == "compiled":
        result = _run_compiled(index, class_masks, table_a, table_b, hp.ln_phi, memo_cap)
    else:
        result = _pure.run_dp(
            index,
            class_masks,
            table_a.tolist(),
            table_b.tolist(),
            hp.ln_phi,
            memo_cap,
        )
    (masks, index_of, leaf, mass, best, feature, cut, threshold, raw_stats) = result
    stats = MemoStats(*raw_stats, backend=chosen)
    return MemoTable(
        data,
        hp,
        masks,
        index_of,
        np.asarray(leaf, dtype=np.float64),
        np.asarray(mass, dtype=np.float64),
        np.asarray(best, dtype=np.float64),
        np.asarray(feature, dtype=np.int32),
        np.asarray(cut, dtype=np.int32),
        np.asarray(threshold, dtype=np.float64),
        stats,
    )


def _run_compiled(index, class_masks, table_a, table_b, ln_phi, memo_cap):
    """Marshal the split tables into flat limb arrays for the extension."""
    n = index.n
    limbs = (n + 63) // 64

    def to_limbs(mask: int) -> np.ndarray:
        return np.frombuffer(mask.to_bytes(limbs * 8, "little"), dtype=np.uint64)

    level_counts = np.asarray([len(v) for v in index.values], dtype=np.int32)
    offsets = np.zeros(index.d + 1, dtype=np.int64)
    np.cumsum(level_counts, out=offsets[1:])
    total_levels = int(offsets[-1])

    at_level = np.zeros((total_levels, limbs), dtype=np.uint64)
    below = np.zeros((total_levels, limbs), dtype=np.uint64)
    values = np.zeros(total_levels, dtype=np.float64)
    for j in range(index.d):
        base = int(offsets[j])
        values[base : base + level_counts[j]] = index.values[j]
        for v in range(level_counts[j]):
            at_level[base + v] = to_limbs(index.at_level[j][v])
            if v < level_counts[j] - 1:
                below[base + v] = to_limbs(index.below[j][v])

    class_rows = np.vstack([to_limbs(m) for m in class_masks])
    keys_blob, leaf, mass, best, feature, cut, threshold, raw_stats = _core.run_dp(
        n,
        limbs,
        offsets,
        at_level,
        below,
        values,
        class_rows,
        np.ascontiguousarray(table_a),
        np.ascontiguousarray(table_b),
        float(ln_phi),
        int(memo_cap),
    )
    width = limbs * 8
    masks = [
        int.from_bytes(keys_blob[r * width : (r + 1) * width], "little")
        for r in range(len(leaf))
    ]
    index_of = {mask: row for row, mask in enumerate(masks)}
    return masks, index_of, leaf, mass, best, feature, cut, threshold, raw_stats


def memo_stats(memo: MemoTable) -> MemoStats:
    return memo.stats


# -- memo dump file ----------------------------------------------------
#
# Layout: magic, u16 version, u32 header length, JSON header (hyperparams,
# dataset metadata, stats, entry count), raw feature/label blocks, then one
# length-prefixed record per entry: u32 point count, that many u32 indices,
# three f64 scores, i32 best feature, i32 best cut, f64 best threshold.
# Everything little-endian.  Written in resolution order, so identical runs
# produce identical bytes.


def dump_memo(memo: MemoTable, path) -> None:
    data = memo.data
    header = {
        "version": MEMO_VERSION,
        "point_count": data.point_count,
        "feature_count": data.feature_count,
        "class_count": data.class_count,
        "alpha": list(memo.params.alpha),
        "ln_phi": memo.params.ln_phi,
        "feature_names": list(data.feature_names),
        "label_names": list(data.label_names),
        "bucket_stages": [
            [list(map(float, edges)) for edges in stages] for stages in data.bucket_stages
        ],
        "string_codes": [
            None if codes is None else dict(codes) for codes in data.string_codes
        ],
        "entry_count": len(memo),
        "stats": {
            "entry_count": memo.stats.entry_count,
            "max_stack_depth": memo.stats.max_stack_depth,
            "child_lookups": memo.stats.child_lookups,
            "child_hits": memo.stats.child_hits,
            "backend": memo.stats.backend,
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MEMO_MAGIC)
        fh.write(struct.pack("<HI", MEMO_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(data.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(data.labels, dtype="<i8").tobytes())
        for row, mask in enumerate(memo.masks):
            indices = PointSet.from_mask(mask).indices
            fh.write(struct.pack("<I", len(indices)))
            fh.write(struct.pack(f"<{len(indices)}I", *indices))
            fh.write(
                struct.pack(
                    "<dddiid",
                    float(memo.log_leaf[row]),
                    float(memo.log_mass[row]),
                    float(memo.log_best[row]),
                    int(memo.best_feature[row]),
                    int(memo.best_cut[row]),
                    float(memo.best_threshold[row]),
                )
            )


def load_memo(path) -> MemoTable:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise MemoFormatError(f"cannot read memo dump: {exc}") from exc
    try:
        return _parse_memo(raw)
    except MemoFormatError:
        raise
    except Exception as exc:
        raise MemoFormatError(f"corrupted memo dump: {exc}") from exc


def _parse_memo(raw: bytes) -> MemoTable:
    if raw[:4] != MEMO_MAGIC:
        raise MemoFormatError("not a memo dump (bad magic)")
    version, header_len = struct.unpack_from("<HI", raw, 4)
    if version != MEMO_VERSION:
        raise MemoFormatError(f"unsupported memo dump version {version}")
    pos = 10
    header = json.loads(raw[pos : pos + header_len].decode("utf-8"))
    pos += header_len
    n = header["point_count"]
    d = header["feature_count"]
    features = (
        np.frombuffer(raw, dtype="<f8", count=n * d, offset=pos).reshape(n, d).copy()
    )
    pos += n * d * 8
    labels = np.frombuffer(raw, dtype="<i8", count=n, offset=pos).copy()
    pos += n * 8
    data = Dataset(
        features=features,
        labels=labels.astype(np.int64),
        class_count=header["class_count"],
        feature_names=tuple(header["feature_names"]),
        label_names=tuple(header["label_names"]),
        bucket_stages=tuple(
            tuple(np.asarray(edges, dtype=np.float64) for edges in stages)
            for stages in header["bucket_stages"]
        ),
        string_codes=tuple(
            None if codes is None else dict(codes) for codes in header["string_codes"]
        ),
    )
    hp = Hyperparams(alpha=tuple(header["alpha"]), ln_phi=header["ln_phi"])

    entry_count = header["entry_count"]
    masks = []
    index_of = {}
    leaf = np.empty(entry_count)
    mass = np.empty(entry_count)
    best = np.empty(entry_count)
    feature = np.empty(entry_count, dtype=np.int32)
    cut = np.empty(entry_count, dtype=np.int32)
    threshold = np.empty(entry_count, dtype=np.float64)
    tail = struct.Struct("<dddiid")
    for row in range(entry_count):
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if count == 0 or count > n:
            raise MemoFormatError(f"record {row}: invalid point count {count}")
        indices = struct.unpack_from(f"<{count}I", raw, pos)
        pos += 4 * count
        mask = indices_to_mask(indices)
        (leaf[row], mass[row], best[row], feature[row], cut[row], threshold[row]) = (
            tail.unpack_from(raw, pos)
        )
        pos += tail.size
        masks.append(mask)
        index_of[mask] = row
    if pos != len(raw):
        raise MemoFormatError("trailing bytes after the final record")
    if len(index_of) != entry_count:
        raise MemoFormatError("duplicate point sets across records")
    root = masks[-1] if masks else 0
    if root != (1 << n) - 1:
        raise MemoFormatError("final record is not the full point set")

    st = header["stats"]
    stats = MemoStats(
        entry_count=st["entry_count"],
        max_stack_depth=st["max_stack_depth"],
        child_lookups=st["child_lookups"],
        child_hits=st["child_hits"],
        backend=st["backend"],
    )
    return MemoTable(
        data, hp, masks, index_of, leaf, mass, best, feature, cut, threshold, stats
    )
