"""Command-line surface: dataset generation, training, sampling, MAP
extraction, prediction, posterior-oracle validation, and benchmark tables.

Every command resolves its configuration from flags (or ``BAYESDT_*``
environment variables), echoes the resolved values to stderr so runs are
reproducible from the transcript, and writes machine-friendly results to
stdout or the requested output file.

Exit codes: 0 success, 2 bad input, 3 memo cap exhausted, 4 oracle check
failed.
"""

from __future__ import annotations

import csv
import functools
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import click
import numpy as np
from scipy.special import logsumexp

from . import __version__
from .baseline import (
    BaselineParams,
    cart_train,
    evaluate,
    forest_predict,
    mean_ci95,
    rf_train,
    tree_predict,
)
from .dataset import Dataset, bucketize, generate_xor, kfold_split, load_csv
from .errors import DatasetError, MemoCapExceeded, MemoFormatError, TreeParseError
from .grammar import (
    committee_predict,
    ensemble_exact_predict,
    extract_map_tree,
    leaf_predictive,
    map_path_predict,
    node_count,
    parse_tree,
    route,
    sampled_path_average,
    serialize_tree,
)
from .oracle import enumerate_trees, oracle_predictive
from .score import (
    Hyperparams,
    MemoTable,
    compute_scores,
    dump_memo,
    load_memo,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MEMO_CAP = 3
EXIT_ORACLE = 4

MEMO_MAGIC = b"BDTM"


@dataclass(frozen=True)
class RunConfig:
    """Resolved knobs shared across commands."""

    alpha: float | tuple[float, ...] = 1.0
    ln_phi: float = 2.0
    bins: int = 10
    folds: int = 10
    trials: int = 5
    seed: int = 0
    memo_cap: int = 5_000_000
    threads: int = 1
    ensemble_mode: str = "exact"

    def hyperparams(self, class_count: int) -> Hyperparams:
        return Hyperparams.for_classes(class_count, self.alpha, self.ln_phi)

    def describe(self) -> str:
        alpha = (
            ",".join(repr(a) for a in self.alpha)
            if isinstance(self.alpha, tuple)
            else repr(self.alpha)
        )
        return (
            f"alpha={alpha} ln_phi={self.ln_phi!r} bins={self.bins} "
            f"folds={self.folds} trials={self.trials} seed={self.seed} "
            f"memo_cap={self.memo_cap} threads={self.threads} "
            f"ensemble_mode={self.ensemble_mode}"
        )


def _parse_alpha(text: str):
    try:
        parts = [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError:
        raise click.BadParameter(f"not a number or comma list: {text!r}")
    if not parts:
        raise click.BadParameter("alpha must not be empty")
    return parts[0] if len(parts) == 1 else tuple(parts)


def _parse_ensemble_mode(text: str) -> str:
    """Accept "exact" or "committee:<k>" (bare "committee" means 100 trees)."""
    if text == "exact":
        return text
    if text == "committee":
        return "committee:100"
    if text.startswith("committee:"):
        try:
            k = int(text.split(":", 1)[1])
        except ValueError:
            k = 0
        if k >= 1:
            return f"committee:{k}"
    raise click.BadParameter(
        f"expected 'exact' or 'committee:<trees>', got {text!r}"
    )


def _echo_config(config: RunConfig) -> None:
    click.echo(f"# config {config.describe()}", err=True)


def cli_errors(fn):
    """Translate domain errors into the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MemoCapExceeded as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_MEMO_CAP)
        except (
            DatasetError,
            MemoFormatError,
            TreeParseError,
            ValueError,
            OSError,
        ) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT)

    return wrapper


def model_options(fn):
    fn = click.option(
        "--ln-phi",
        type=float,
        default=RunConfig.ln_phi,
        show_default=True,
        help="Natural-log penalty applied per tree node.",
    )(fn)
    fn = click.option(
        "--alpha",
        default="1.0",
        show_default=True,
        help="Dirichlet pseudo-count: a scalar or comma-separated per-class list.",
    )(fn)
    return fn


def _config_from(kwargs: dict) -> RunConfig:
    """Build a RunConfig from however many shared flags a command declares."""
    fields = {}
    for name in (
        "alpha",
        "ln_phi",
        "bins",
        "folds",
        "trials",
        "seed",
        "memo_cap",
        "threads",
        "ensemble_mode",
    ):
        if name in kwargs and kwargs[name] is not None:
            value = kwargs.pop(name)
            if name == "alpha" and isinstance(value, str):
                value = _parse_alpha(value)
            if name == "ensemble_mode":
                value = _parse_ensemble_mode(value)
            fields[name] = value
        else:
            kwargs.pop(name, None)
    config = RunConfig(**fields)
    if config.bins < 0:
        raise click.BadParameter("--bins must be >= 0 (0 disables bucketing)")
    if config.folds < 1 or config.trials < 1 or config.threads < 1:
        raise click.BadParameter("--folds, --trials and --threads must be >= 1")
    if config.memo_cap < 1:
        raise click.BadParameter("--memo-cap must be >= 1")
    return config


@click.group(context_settings={"auto_envvar_prefix": "BAYESDT"})
@click.version_option(__version__)
def cli():
    """Exact Bayesian decision-tree posteriors over bounding boxes."""


def main():
    cli(auto_envvar_prefix="BAYESDT")


# -- dataset generation ------------------------------------------------


@cli.command("generate-xor")
@click.argument("output", type=click.Path(dir_okay=False, writable=True))
@click.option("--count", "-n", type=int, default=512, show_default=True,
              help="Number of rows (ignored with --grid).")
@click.option("--features", "-d", type=int, default=8, show_default=True)
@click.option("--parity", "-k", type=int, default=4, show_default=True,
              help="How many leading features the label XORs together.")
@click.option("--grid", is_flag=True, help="Emit every binary vector exactly once.")
@click.option("--seed", type=int, default=0, show_default=True)
@cli_errors
def cmd_generate_xor(output, count, features, parity, grid, seed):
    """Write a parity-labelled binary dataset as CSV."""
    if grid:
        count = 2**features
    click.echo(
        f"# config count={count} features={features} parity={parity} "
        f"grid={grid} seed={seed}",
        err=True,
    )
    data = generate_xor(count, features, parity, seed=seed, grid=grid)
    with open(output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.feature_names) + ["label"])
        for row, label in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    click.echo(
        f"wrote {data.point_count} rows x {data.feature_count} features to {output}"
    )


# -- training ----------------------------------------------------------


def _load_dataset(path, label_column, encode_strings) -> Dataset:
    if label_column is not None:
        try:
            label_column = int(label_column)
        except ValueError:
            pass
    return load_csv(path, label_column=label_column, encode_strings=encode_strings)


@cli.command("train")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "-o", required=True,
              type=click.Path(dir_okay=False, writable=True),
              help="Where to write the memo dump.")
@model_options
@click.option("--bins", type=int, default=RunConfig.bins, show_default=True,
              help="Quantile-bucket each feature to at most this many values; 0 keeps raw values.")
@click.option("--memo-cap", type=int, default=RunConfig.memo_cap, show_default=True)
@click.option("--label-column", default=None,
              help="Label column name or index (default: last column).")
@click.option("--encode-strings", is_flag=True,
              help="Encode non-numeric feature columns as ordinals.")
@cli_errors
def cmd_train(dataset, output, label_column, encode_strings, **kwargs):
    """Compute posterior scores for every reachable box and dump the table."""
    config = _config_from(kwargs)
    _echo_config(config)
    data = _load_dataset(dataset, label_column, encode_strings)
    if config.bins:
        data = bucketize(data, config.bins)
    started = time.perf_counter()
    memo = compute_scores(
        data, config.hyperparams(data.class_count), memo_cap=config.memo_cap
    )
    elapsed = time.perf_counter() - started
    dump_memo(memo, output)
    stats = memo.stats
    click.echo(
        f"memo {output}: entries={stats.entry_count} "
        f"max_stack_depth={stats.max_stack_depth} "
        f"hit_rate={stats.hit_rate:.3f} backend={stats.backend} "
        f"seconds={elapsed:.2f}"
    )


# -- tree extraction ---------------------------------------------------


def _write_lines(lines, output) -> None:
    if output is None:
        for line in lines:
            click.echo(line)
    else:
        with open(output, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@cli.command("map")
@click.argument("memo", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "-o", default=None,
              type=click.Path(dir_okay=False, writable=True))
@cli_errors
def cmd_map(memo, output):
    """Print the maximum a posteriori tree as an s-expression."""
    table = load_memo(memo)
    tree = extract_map_tree(table)
    click.echo(f"# map tree: {node_count(tree)} nodes", err=True)
    _write_lines([serialize_tree(tree)], output)


@cli.command("sample")
@click.argument("memo", type=click.Path(exists=True, dir_okay=False))
@click.option("--count", "-n", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=RunConfig.seed, show_default=True)
@click.option("--output", "-o", default=None,
              type=click.Path(dir_okay=False, writable=True))
@cli_errors
def cmd_sample(memo, count, seed, output):
    """Draw trees from the posterior, one s-expression per line."""
    if count < 1:
        raise click.BadParameter("--count must be >= 1")
    table = load_memo(memo)
    from .grammar import sample_tree  # local import keeps the hot path obvious

    rng = np.random.default_rng(seed)
    _write_lines([serialize_tree(sample_tree(table, rng)) for _ in range(count)], output)


# -- prediction --------------------------------------------------------


def _load_model(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MEMO_MAGIC:
        return load_memo(path), None
    with open(path, "r") as fh:
        return None, parse_tree(fh.read())


def _read_queries(path, feature_count: int | None) -> np.ndarray:
    """Query rows as floats; a header row and a trailing column headed
    "label" are dropped, so dataset CSVs can be replayed as queries.
    ``feature_count`` None takes the width from the file itself."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DatasetError(f"no rows in {path}")

    def numeric(cell):
        try:
            float(cell)
            return True
        except ValueError:
            return False

    if not all(numeric(c) for c in rows[0]):
        header, rows = rows[0], rows[1:]
        if not rows:
            raise DatasetError(f"no data rows in {path}")
        if header[-1].strip().lower() == "label":
            rows = [row[:-1] for row in rows]
    if feature_count is None:
        feature_count = len(rows[0])
    out = np.empty((len(rows), feature_count), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) not in (feature_count, feature_count + 1):
            raise DatasetError(
                f"query row {i} has {len(row)} cells, expected {feature_count}"
            )
        for j in range(feature_count):
            if not numeric(row[j]):
                raise DatasetError(f"non-numeric query cell {row[j]!r} at row {i}")
            out[i, j] = float(row[j])
    return out


def _predictor(memo: MemoTable, mode: str, config: RunConfig, draws: int):
    """Return query -> per-class predictive distribution for a memo model."""
    rng = np.random.default_rng(config.seed)
    if mode == "map-path":
        tree = extract_map_tree(memo)

        def predict(query):
            encoded = memo.data.transform_raw(np.asarray(query)[None, :])[0]
            return leaf_predictive(route(tree, encoded).counts, memo.params)

        return predict
    if mode == "sampled-path":
        return lambda query: sampled_path_average(query, memo, rng, draws)
    if mode in ("ensemble", "ensemble-exact"):
        style = "exact" if mode == "ensemble-exact" else config.ensemble_mode
        if style == "exact":
            return lambda query: ensemble_exact_predict(query, memo)
        trees = int(style.split(":", 1)[1])
        return lambda query: committee_predict(query, memo, rng, trees)
    raise click.BadParameter(f"unknown mode {mode!r}")


@cli.command("predict")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("queries", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "-o", default=None,
              type=click.Path(dir_okay=False, writable=True))
@click.option("--mode", type=click.Choice(
    ["map-path", "sampled-path", "ensemble", "ensemble-exact"]),
    default="map-path", show_default=True)
@click.option("--draws", type=int, default=1000, show_default=True,
              help="Path samples per query in sampled-path mode.")
@click.option("--seed", type=int, default=RunConfig.seed, show_default=True)
@click.option("--ensemble-mode", default="exact", show_default=True,
              help="'exact' for the closed-form posterior average, "
                   "'committee:<k>' to average k sampled trees.")
@model_options
@cli_errors
def cmd_predict(model, queries, output, mode, draws, **kwargs):
    """Label query rows with a memo table or a serialized tree.

    MODEL is either a memo dump (posterior predictions in the chosen mode)
    or a tree s-expression file (plain routing).  Output is CSV with the
    predicted label and the per-class predictive distribution.
    """
    config = _config_from(kwargs)
    _echo_config(config)
    if draws < 1:
        raise click.BadParameter("--draws must be >= 1")
    memo, tree = _load_model(model)
    if memo is not None:
        feature_count = memo.data.feature_count
        class_count = memo.data.class_count
        predict = _predictor(memo, mode, config, draws)
    else:
        leaf = tree
        while not hasattr(leaf, "counts"):
            leaf = leaf.left
        class_count = len(leaf.counts)
        hp = Hyperparams.for_classes(class_count, config.alpha, config.ln_phi)
        feature_count = None
        predict = lambda query: leaf_predictive(route(tree, query).counts, hp)
    matrix = _read_queries(queries, feature_count)
    if tree is not None and matrix.shape[1] < _tree_feature_count(tree):
        raise DatasetError(
            f"tree splits feature {_tree_feature_count(tree) - 1} but queries "
            f"have only {matrix.shape[1]} columns"
        )
    lines = [f"# config {config.describe()} mode={mode}",
             "prediction," + ",".join(f"p{c}" for c in range(class_count))]
    for row in matrix:
        dist = predict(row)
        lines.append(
            f"{int(np.argmax(dist))}," + ",".join(repr(float(p)) for p in dist)
        )
    _write_lines(lines, output)


def _tree_feature_count(tree) -> int:
    """Smallest feature count consistent with the tree's split features."""
    best = 1

    def walk(node):
        nonlocal best
        if hasattr(node, "counts"):
            return
        best = max(best, node.split.feature + 1)
        walk(node.left)
        walk(node.right)

    walk(tree)
    return best


# -- benchmark ---------------------------------------------------------

BENCHMARK_METHODS = ("posterior-map", "cart", "rf")


def _fold_results(data, train_idx, test_idx, config, seed):
    """accuracy and tree size per method on one train/test split."""
    train = data.subset(train_idx)
    bucketed = bucketize(train, config.bins) if config.bins else train
    memo = compute_scores(
        bucketed, config.hyperparams(data.class_count), memo_cap=config.memo_cap
    )
    map_tree = extract_map_tree(memo)
    cart = cart_train(train, BaselineParams(seed=seed))
    forest = rf_train(train, BaselineParams(seed=seed))
    out = {
        "posterior-map": (
            evaluate(lambda v: map_path_predict(v, memo), data, test_idx).accuracy,
            node_count(map_tree),
        ),
        "cart": (
            evaluate(lambda v: tree_predict(cart, v), data, test_idx).accuracy,
            node_count(cart),
        ),
        "rf": (
            evaluate(
                lambda v: forest_predict(forest, v, data.class_count), data, test_idx
            ).accuracy,
            float(np.mean([node_count(t) for t in forest])),
        ),
    }
    return out


def _benchmark_dataset(name, data, config):
    acc = {m: [] for m in BENCHMARK_METHODS}
    size = {m: [] for m in BENCHMARK_METHODS}
    for trial in range(config.trials):
        seed = config.seed + trial
        if config.folds == 1:
            everything = np.arange(data.point_count)
            splits = [(everything, everything)]
        else:
            splits = list(kfold_split(data, config.folds, seed).splits())
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                results = list(
                    pool.map(
                        lambda pair: _fold_results(data, *pair, config, seed), splits
                    )
                )
        else:
            results = [_fold_results(data, tr, te, config, seed) for tr, te in splits]
        for method in BENCHMARK_METHODS:
            acc[method].append(float(np.mean([r[method][0] for r in results])))
            size[method].append(float(np.mean([r[method][1] for r in results])))
    rows = []
    for method in BENCHMARK_METHODS:
        am, ah = mean_ci95(acc[method])
        sm, sh = mean_ci95(size[method])
        rows.append((name, method, am, ah, sm, sh))
    return rows


def _dataset_name(path) -> str:
    stem = str(path).rsplit("/", 1)[-1]
    return stem.rsplit(".", 1)[0] if "." in stem else stem


@cli.command("benchmark")
@click.argument("datasets", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@model_options
@click.option("--bins", type=int, default=RunConfig.bins, show_default=True)
@click.option("--folds", type=int, default=RunConfig.folds, show_default=True,
              help="Cross-validation folds; 1 evaluates on the training data (smoke test).")
@click.option("--trials", type=int, default=RunConfig.trials, show_default=True,
              help="Re-seeded repetitions of the whole cross-validation.")
@click.option("--seed", type=int, default=RunConfig.seed, show_default=True)
@click.option("--memo-cap", type=int, default=RunConfig.memo_cap, show_default=True)
@click.option("--threads", type=int, default=RunConfig.threads, show_default=True,
              help="Worker bound for concurrent fold evaluation.")
@click.option("--label-column", default=None)
@click.option("--encode-strings", is_flag=True)
@click.option("--rows-out", default=None,
              type=click.Path(dir_okay=False, writable=True),
              help="Also write tab-separated rows for downstream tooling.")
@cli_errors
def cmd_benchmark(datasets, label_column, encode_strings, rows_out, **kwargs):
    """Cross-validated accuracy and size for the posterior MAP tree, CART
    and a random forest, reported as mean +/- 95% CI over trials."""
    config = _config_from(kwargs)
    _echo_config(config)
    rows = []
    for path in datasets:
        data = _load_dataset(path, label_column, encode_strings)
        started = time.perf_counter()
        rows.extend(_benchmark_dataset(_dataset_name(path), data, config))
        click.echo(
            f"# {_dataset_name(path)}: {time.perf_counter() - started:.1f}s",
            err=True,
        )
    header = ("dataset", "method", "accuracy", "size")
    cells = [
        (name, method, f"{am:.4f} ± {ah:.4f}", f"{sm:.1f} ± {sh:.1f}")
        for name, method, am, ah, sm, sh in rows
    ]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(header)]
    click.echo(f"# config {config.describe()}")
    click.echo("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for cell in cells:
        click.echo("  ".join(c.ljust(w) for c, w in zip(cell, widths)))
    if rows_out is not None:
        lines = ["dataset\tmethod\taccuracy_mean\taccuracy_half\tsize_mean\tsize_half"]
        lines += [
            f"{name}\t{method}\t{am!r}\t{ah!r}\t{sm!r}\t{sh!r}"
            for name, method, am, ah, sm, sh in rows
        ]
        with open(rows_out, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# -- oracle validation -------------------------------------------------


def _oracle_fixtures(selector, count, seed):
    if selector in ("single-point", "all"):
        yield "single-point", Dataset(np.array([[0.0]]), np.array([0]), 2)
    if selector in ("two-point", "all"):
        yield "two-point", Dataset(np.array([[0.0], [1.0]]), np.array([0, 1]), 2)
    if selector in ("xor-grid", "all"):
        yield "xor-grid", generate_xor(4, 2, 2, seed=0, grid=True)
    if selector in ("random", "all"):
        rng = np.random.default_rng(seed)
        for i in range(count):
            n = int(rng.integers(2, 7))
            d = int(rng.integers(1, 3))
            features = rng.integers(0, 3, size=(n, d)).astype(np.float64)
            labels = rng.integers(0, 2, size=n).astype(np.int64)
            labels[0] = 0
            yield f"random-{i}", Dataset(features, labels, 2)


def _check_fixture(name, data, hp, report):
    memo = compute_scores(data, hp)
    trees = enumerate_trees(data, hp)
    weights = np.array([t.log_weight for t in trees])
    root = memo.entry(memo.root_mask)
    ok = True
    mass_err = abs(root.log_mass - (hp.ln_phi + logsumexp(weights)))
    ok &= report(name, "mass-identity", mass_err < 1e-9, f"err={mass_err:.2e}")
    best_err = abs(root.log_best - (hp.ln_phi + weights.max()))
    ok &= report(name, "best-identity", best_err < 1e-9, f"err={best_err:.2e}")
    order = np.argsort(weights)
    if len(weights) == 1 or weights[order[-1]] - weights[order[-2]] > 1e-9:
        want = serialize_tree(trees[order[-1]].tree)
        got = serialize_tree(extract_map_tree(memo))
        ok &= report(name, "map-agreement", got == want, "argmax tree")
    pred_err = 0.0
    for row in data.features:
        exact = ensemble_exact_predict(row, memo)
        brute = oracle_predictive(row, data, hp)
        pred_err = max(pred_err, float(np.abs(exact - brute).max()))
    ok &= report(name, "predictive-identity", pred_err < 1e-9, f"err={pred_err:.2e}")
    return ok


@cli.command("oracle-check")
@click.option("--fixture", type=click.Choice(
    ["single-point", "two-point", "xor-grid", "random", "all"]),
    default="all", show_default=True)
@click.option("--count", type=int, default=20, show_default=True,
              help="How many random fixtures to draw.")
@click.option("--seed", type=int, default=RunConfig.seed, show_default=True)
@click.option("--memo", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Also recompute this memo dump and compare bit-for-bit.")
@model_options
@cli_errors
def cmd_oracle_check(fixture, count, memo, **kwargs):
    """Compare the dynamic program against brute-force tree enumeration."""
    config = _config_from(kwargs)
    _echo_config(config)

    def report(name, check, passed, detail):
        click.echo(f"[oracle] {name} {check}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed

    all_ok = True
    for name, data in _oracle_fixtures(fixture, count, config.seed):
        hp = config.hyperparams(data.class_count)
        all_ok &= _check_fixture(name, data, hp, report)
    if memo is not None:
        stored = load_memo(memo)
        fresh = compute_scores(
            stored.data, stored.params, memo_cap=max(len(stored) + 1, 2)
        )
        same = stored.masks == fresh.masks
        for col in ("log_leaf", "log_mass", "log_best", "best_threshold"):
            # stop rows carry NaN thresholds, which compare equal here
            same &= np.array_equal(
                getattr(stored, col), getattr(fresh, col), equal_nan=True
            )
        for col in ("best_feature", "best_cut"):
            same &= np.array_equal(getattr(stored, col), getattr(fresh, col))
        all_ok &= report("memo-dump", "recompute-match", same, memo)
    if not all_ok:
        click.echo("oracle check FAILED", err=True)
        sys.exit(EXIT_ORACLE)
    click.echo("oracle check passed")


if __name__ == "__main__":
    main()
