"""CSV ingestion, feature bucketing, the synthetic XOR generator, and CV folds."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import DatasetError


@dataclass(frozen=True, eq=False)
class Dataset:
    """A classification dataset with ordinal feature columns.

    ``features`` holds the split-ready values: bucketed columns contain bin
    indices, untouched columns contain the raw numeric values.  The bucketing
    stages needed to route a raw query into the same value space are kept in
    ``bucket_stages`` (one tuple of edge arrays per feature, applied in order).
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    feature_names: tuple[str, ...] = ()
    label_names: tuple[str, ...] = ()
    bucket_stages: tuple[tuple[np.ndarray, ...], ...] = ()
    string_codes: tuple[dict[str, float] | None, ...] = ()

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise DatasetError(f"feature matrix must be n x d with n,d >= 1, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DatasetError("labels must be a vector matching the number of rows")
        if self.class_count < 2:
            raise DatasetError("need at least two classes")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise DatasetError("labels must lie in {0..class_count-1}")
        d = features.shape[1]
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"f{j}" for j in range(d)))
        if not self.label_names:
            object.__setattr__(self, "label_names", tuple(str(c) for c in range(self.class_count)))
        if not self.bucket_stages:
            object.__setattr__(self, "bucket_stages", tuple(() for _ in range(d)))
        if not self.string_codes:
            object.__setattr__(self, "string_codes", tuple(None for _ in range(d)))
        if len(self.feature_names) != d or len(self.bucket_stages) != d or len(self.string_codes) != d:
            raise DatasetError("per-feature metadata does not match the feature count")
        if len(self.label_names) != self.class_count:
            raise DatasetError("label_names must have one entry per class")

    @property
    def point_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        """Row subset sharing all metadata (class count, names, transforms)."""
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def transform_raw(self, raw) -> np.ndarray:
        """Map raw numeric query rows into this dataset's feature value space."""
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        if raw.shape[1] != self.feature_count:
            raise DatasetError(f"expected {self.feature_count} features, got {raw.shape[1]}")
        out = raw.copy()
        for j, stages in enumerate(self.bucket_stages):
            for edges in stages:
                out[:, j] = np.searchsorted(edges, out[:, j], side="right").astype(np.float64)
        return out

    def encode_rows(self, rows: list[list[str]]) -> np.ndarray:
        """Parse raw string cells, applying stored string-to-ordinal codes."""
        out = np.empty((len(rows), self.feature_count), dtype=np.float64)
        for i, row in enumerate(rows):
            if len(row) != self.feature_count:
                raise DatasetError(f"row {i} has {len(row)} cells, expected {self.feature_count}")
            for j, cell in enumerate(row):
                codes = self.string_codes[j]
                if codes is not None:
                    if cell not in codes:
                        raise DatasetError(f"unknown category {cell!r} for feature {self.feature_names[j]!r}")
                    out[i, j] = codes[cell]
                else:
                    try:
                        out[i, j] = float(cell)
                    except ValueError:
                        raise DatasetError(f"non-numeric cell {cell!r} at row {i}, feature {self.feature_names[j]!r}") from None
        return out


@dataclass(frozen=True)
class FoldPlan:
    """A k-way partition of row indices produced by a seeded shuffle."""

    k: int
    assignments: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def splits(self):
        for fold in range(self.k):
            yield self.train_indices(fold), self.test_indices(fold)


def load_csv(path, label_column=None, encode_strings: bool = False) -> Dataset:
    """Load a headered CSV into a Dataset.

    The label column may be given by header name or integer position and
    defaults to the last column.  Label values are densely re-encoded in order
    of first appearance.  With ``encode_strings``, feature columns that are
    entirely non-numeric are ordinal-encoded in file order; a stray
    non-numeric cell in a numeric column is always an error.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DatasetError(f"{path}: empty file") from None
            rows = [row for row in reader if row]
    except FileNotFoundError:
        raise DatasetError(f"no such file: {path}") from None
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {i + 1} has {len(row)} cells, header has {len(header)}")

    label_idx = _resolve_label_column(header, label_column)
    feature_cols = [j for j in range(len(header)) if j != label_idx]
    if not feature_cols:
        raise DatasetError(f"{path}: no feature columns")

    n = len(rows)
    features = np.empty((n, len(feature_cols)), dtype=np.float64)
    string_codes: list[dict[str, float] | None] = []
    for out_j, j in enumerate(feature_cols):
        col = [row[j] for row in rows]
        parsed, bad = _parse_numeric(col)
        if bad is None:
            features[:, out_j] = parsed
            string_codes.append(None)
            continue
        if encode_strings and all(not _is_number(c) for c in col):
            codes: dict[str, float] = {}
            for cell in col:
                if cell not in codes:
                    codes[cell] = float(len(codes))
            features[:, out_j] = [codes[c] for c in col]
            string_codes.append(codes)
        else:
            raise DatasetError(f"{path}: non-numeric cell {col[bad]!r} in column {header[j]!r} (row {bad + 1})")

    label_order: dict[str, int] = {}
    for row in rows:
        token = row[label_idx]
        if token not in label_order:
            label_order[token] = len(label_order)
    if len(label_order) < 2:
        raise DatasetError(f"{path}: label column {header[label_idx]!r} has a single class")
    labels = np.array([label_order[row[label_idx]] for row in rows], dtype=np.int64)

    return Dataset(
        features=features,
        labels=labels,
        class_count=len(label_order),
        feature_names=tuple(header[j] for j in feature_cols),
        label_names=tuple(label_order),
        string_codes=tuple(string_codes),
    )


def bucketize(data: Dataset, max_bins: int) -> Dataset:
    """Replace high-cardinality feature columns with equal-width bin indices.

    Columns with at most ``max_bins`` distinct values pass through unchanged,
    which makes the operation idempotent.  Bin edges are recorded on the
    returned dataset so raw queries can be routed through the same mapping.
    """
    if max_bins < 2:
        raise DatasetError("max_bins must be at least 2")
    features = data.features.copy()
    stages = [list(s) for s in data.bucket_stages]
    for j in range(data.feature_count):
        col = features[:, j]
        if np.unique(col).size <= max_bins:
            continue
        lo, hi = col.min(), col.max()
        edges = lo + (hi - lo) * np.arange(1, max_bins) / max_bins
        features[:, j] = np.searchsorted(edges, col, side="right").astype(np.float64)
        stages[j].append(edges)
    return replace(
        data,
        features=features,
        bucket_stages=tuple(tuple(s) for s in stages),
    )


def generate_xor(n: int, d: int, k: int, seed: int, grid: bool = False) -> Dataset:
    """Binary features with the label equal to the XOR of the first ``k``.

    With ``grid`` the rows enumerate all 2**d patterns (feature 0 is the most
    significant bit) and ``n`` must equal 2**d; otherwise each feature is an
    independent fair coin flip.
    """
    if k > d:
        raise DatasetError(f"k={k} informative bits exceed d={d} features")
    if k < 1 or d < 1 or n < 1:
        raise DatasetError("n, d, k must be positive")
    if grid:
        if n != 2**d:
            raise DatasetError(f"grid mode needs n = 2^d = {2 ** d}, got {n}")
        bits = ((np.arange(n)[:, None] >> (d - 1 - np.arange(d))) & 1).astype(np.float64)
    else:
        rng = np.random.default_rng(seed)
        bits = rng.integers(0, 2, size=(n, d)).astype(np.float64)
    labels = (bits[:, :k].sum(axis=1).astype(np.int64)) % 2
    return Dataset(features=bits, labels=labels, class_count=2)


def kfold_split(data: Dataset, k: int, seed: int) -> FoldPlan:
    """Shuffled near-equal partition of the rows into k folds."""
    n = data.point_count
    if k < 2:
        raise DatasetError("need at least 2 folds")
    if n < k:
        raise DatasetError(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % k
    return FoldPlan(k=k, assignments=assignments, seed=seed)


def _resolve_label_column(header: list[str], label_column) -> int:
    if label_column is None:
        return len(header) - 1
    if isinstance(label_column, int):
        idx = label_column
    elif label_column in header:
        return header.index(label_column)
    else:
        try:
            idx = int(label_column)
        except ValueError:
            raise DatasetError(f"no column named {label_column!r} in header {header}") from None
    if not -len(header) <= idx < len(header):
        raise DatasetError(f"label column index {idx} out of range for {len(header)} columns")
    return idx % len(header)


def _parse_numeric(col: list[str]):
    out = np.empty(len(col), dtype=np.float64)
    for i, cell in enumerate(col):
        try:
            out[i] = float(cell)
        except ValueError:
            return None, i
    return out, None


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True
