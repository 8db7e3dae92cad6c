"""Exact Bayesian posteriors over axis-aligned decision trees.

The package computes, by dynamic programming over canonical bounding boxes,
the full posterior of classification trees under a Dirichlet label prior and
an exponential size penalty — then samples trees from it, extracts the MAP
tree, and answers queries either by path sampling or by an exact
posterior-predictive recursion.
"""

from .dataset import Dataset, FoldPlan, bucketize, generate_xor, kfold_split, load_csv
from .errors import (
    DatasetError,
    EnumerationCapExceeded,
    MemoCapExceeded,
    MemoFormatError,
    TreeParseError,
)
from .score import (
    Hyperparams,
    MemoEntry,
    MemoStats,
    MemoTable,
    compute_scores,
    dump_memo,
    load_memo,
    log_beta,
    log_leaf_likelihood,
    memo_stats,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FoldPlan",
    "Hyperparams",
    "MemoEntry",
    "MemoStats",
    "MemoTable",
    "DatasetError",
    "EnumerationCapExceeded",
    "MemoCapExceeded",
    "MemoFormatError",
    "TreeParseError",
    "bucketize",
    "compute_scores",
    "dump_memo",
    "generate_xor",
    "kfold_split",
    "load_csv",
    "load_memo",
    "log_beta",
    "log_leaf_likelihood",
    "memo_stats",
]
