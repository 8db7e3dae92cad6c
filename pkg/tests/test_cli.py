import struct

import numpy as np
import pytest
from click.testing import CliRunner

from bayesdt.cli import cli
from bayesdt.dataset import load_csv
from bayesdt.grammar import node_count, parse_tree
from bayesdt.score import load_memo

runner = CliRunner()


def run(args, **kwargs):
    return runner.invoke(cli, args, **kwargs)


def run_ok(args, **kwargs):
    result = run(args, **kwargs)
    assert result.exit_code == 0, result.output
    return result


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """A generated XOR dataset plus a trained memo, shared across tests."""
    root = tmp_path_factory.mktemp("cli")
    csv_path = root / "xor.csv"
    memo_path = root / "xor.memo"
    run_ok(["generate-xor", str(csv_path), "-n", "64", "-d", "3", "-k", "2",
            "--seed", "5"])
    run_ok(["train", str(csv_path), "-o", str(memo_path), "--bins", "0"])
    return {"root": root, "csv": csv_path, "memo": memo_path}


class TestGenerateXor:
    def test_output_loads_as_dataset(self, workspace):
        data = load_csv(workspace["csv"])
        assert data.point_count == 64
        assert data.feature_count == 3
        assert data.class_count == 2

    def test_grid_is_exhaustive(self, tmp_path):
        out = tmp_path / "grid.csv"
        run_ok(["generate-xor", str(out), "-d", "2", "-k", "2", "--grid"])
        data = load_csv(out)
        assert data.point_count == 4
        assert sorted(map(tuple, data.features.tolist())) == [
            (0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]

    def test_deterministic_per_seed(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_ok(["generate-xor", str(a), "-n", "32", "--seed", "9"])
        run_ok(["generate-xor", str(b), "-n", "32", "--seed", "9"])
        assert a.read_bytes() == b.read_bytes()


class TestTrain:
    def test_reports_stats_and_config(self, workspace):
        result = run_ok(["train", str(workspace["csv"]),
                         "-o", str(workspace["root"] / "again.memo"),
                         "--bins", "0"])
        assert "entries=" in result.stdout
        assert "# config" in result.stderr

    def test_dump_is_reproducible(self, workspace, tmp_path):
        out = tmp_path / "re.memo"
        run_ok(["train", str(workspace["csv"]), "-o", str(out), "--bins", "0"])
        assert out.read_bytes() == workspace["memo"].read_bytes()

    def test_env_var_overrides_flag(self, workspace, tmp_path):
        out = tmp_path / "env.memo"
        run_ok(["train", str(workspace["csv"]), "-o", str(out), "--bins", "0"],
               env={"BAYESDT_TRAIN_LN_PHI": "0.0"})
        assert load_memo(out).params.ln_phi == 0.0

    def test_alpha_vector(self, workspace, tmp_path):
        out = tmp_path / "alpha.memo"
        run_ok(["train", str(workspace["csv"]), "-o", str(out),
                "--bins", "0", "--alpha", "0.5,2.0"])
        assert load_memo(out).params.alpha == (0.5, 2.0)

    def test_memo_cap_exit_code(self, workspace, tmp_path):
        result = run(["train", str(workspace["csv"]),
                      "-o", str(tmp_path / "capped.memo"), "--memo-cap", "2"])
        assert result.exit_code == 3
        assert "error:" in result.stderr

    def test_missing_dataset(self, tmp_path):
        result = run(["train", str(tmp_path / "nope.csv"),
                      "-o", str(tmp_path / "x.memo")])
        assert result.exit_code == 2

    def test_malformed_dataset(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("just one line no commas\n")
        result = run(["train", str(bad), "-o", str(tmp_path / "x.memo")])
        assert result.exit_code == 2
        assert "error:" in result.stderr


class TestMap:
    def test_tree_parses_and_has_expected_size(self, workspace):
        result = run_ok(["map", str(workspace["memo"])])
        tree = parse_tree(result.stdout.strip())
        assert node_count(tree) == 7  # parity on 2 of 3 features

    def test_output_file(self, workspace, tmp_path):
        out = tmp_path / "map.tree"
        run_ok(["map", str(workspace["memo"]), "-o", str(out)])
        assert node_count(parse_tree(out.read_text())) == 7


class TestSample:
    def test_count_and_parseability(self, workspace):
        result = run_ok(["sample", str(workspace["memo"]), "-n", "5",
                         "--seed", "3"])
        lines = result.stdout.strip().splitlines()
        assert len(lines) == 5
        for line in lines:
            parse_tree(line)

    def test_seeded_reproducibility(self, workspace):
        first = run_ok(["sample", str(workspace["memo"]), "-n", "4", "--seed", "7"])
        second = run_ok(["sample", str(workspace["memo"]), "-n", "4", "--seed", "7"])
        assert first.stdout == second.stdout

    def test_rejects_zero_count(self, workspace):
        assert run(["sample", str(workspace["memo"]), "-n", "0"]).exit_code == 2


def _parse_predictions(text):
    rows = [line for line in text.splitlines() if line and not line.startswith("#")]
    header, body = rows[0], rows[1:]
    labels = [int(line.split(",")[0]) for line in body]
    dists = [np.array([float(x) for x in line.split(",")[1:]]) for line in body]
    return header, labels, dists


class TestPredict:
    def test_map_path_fits_training_data(self, workspace):
        # queries reuse the dataset CSV; the trailing label column is ignored
        result = run_ok(["predict", str(workspace["memo"]), str(workspace["csv"])])
        _, labels, _ = _parse_predictions(result.stdout)
        data = load_csv(workspace["csv"])
        assert labels == data.labels.tolist()

    def test_ensemble_exact_distributions_normalized(self, workspace):
        result = run_ok(["predict", str(workspace["memo"]), str(workspace["csv"]),
                         "--mode", "ensemble-exact"])
        header, labels, dists = _parse_predictions(result.stdout)
        assert header == "prediction,p0,p1"
        for label, dist in zip(labels, dists):
            assert abs(dist.sum() - 1.0) < 1e-9
            assert label == int(np.argmax(dist))

    def test_sampled_path_mode_runs(self, workspace):
        run_ok(["predict", str(workspace["memo"]), str(workspace["csv"]),
                "--mode", "sampled-path", "--draws", "50", "--seed", "1"])

    def test_committee_ensemble_mode(self, workspace):
        result = run_ok(["predict", str(workspace["memo"]), str(workspace["csv"]),
                         "--mode", "ensemble", "--ensemble-mode", "committee:25",
                         "--seed", "2"])
        _, _, dists = _parse_predictions(result.stdout)
        for dist in dists:
            assert abs(dist.sum() - 1.0) < 1e-9

    def test_tree_file_matches_memo_map_path(self, workspace, tmp_path):
        tree_path = tmp_path / "map.tree"
        run_ok(["map", str(workspace["memo"]), "-o", str(tree_path)])
        by_memo = run_ok(["predict", str(workspace["memo"]), str(workspace["csv"])])
        by_tree = run_ok(["predict", str(tree_path), str(workspace["csv"])])
        assert _parse_predictions(by_memo.stdout)[1] == \
            _parse_predictions(by_tree.stdout)[1]

    def test_wrong_query_width(self, workspace, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("1.0\n")
        result = run(["predict", str(workspace["memo"]), str(bad)])
        assert result.exit_code == 2
        assert "error:" in result.stderr

    def test_config_echoed_in_output(self, workspace):
        result = run_ok(["predict", str(workspace["memo"]), str(workspace["csv"])])
        assert result.stdout.startswith("# config ")


class TestBenchmark:
    def test_smoke_single_fold(self, workspace, tmp_path):
        rows_path = tmp_path / "rows.tsv"
        result = run_ok(["benchmark", str(workspace["csv"]), "--folds", "1",
                         "--trials", "1", "--bins", "0",
                         "--rows-out", str(rows_path)])
        for method in ("posterior-map", "cart", "rf"):
            assert method in result.stdout
        lines = rows_path.read_text().strip().splitlines()
        assert lines[0].split("\t") == [
            "dataset", "method", "accuracy_mean", "accuracy_half",
            "size_mean", "size_half"]
        assert len(lines) == 4

    def test_rows_match_human_table(self, workspace, tmp_path):
        rows_path = tmp_path / "rows.tsv"
        result = run_ok(["benchmark", str(workspace["csv"]), "--folds", "2",
                         "--trials", "2", "--bins", "0",
                         "--rows-out", str(rows_path)])
        for line in rows_path.read_text().strip().splitlines()[1:]:
            _, method, am, ah, sm, sh = line.split("\t")
            assert f"{float(am):.4f} ± {float(ah):.4f}" in result.stdout
            assert f"{float(sm):.1f} ± {float(sh):.1f}" in result.stdout

    def test_threads_do_not_change_results(self, workspace, tmp_path):
        serial, parallel = tmp_path / "serial.tsv", tmp_path / "parallel.tsv"
        base = ["benchmark", str(workspace["csv"]), "--folds", "2",
                "--trials", "1", "--bins", "0"]
        run_ok(base + ["--rows-out", str(serial)])
        run_ok(base + ["--threads", "4", "--rows-out", str(parallel)])
        assert serial.read_text() == parallel.read_text()


class TestOracleCheck:
    def test_hand_fixtures_pass(self):
        result = run_ok(["oracle-check", "--fixture", "two-point"])
        assert "mass-identity: PASS" in result.stdout
        assert "oracle check passed" in result.stdout

    def test_random_fixtures_pass(self):
        result = run_ok(["oracle-check", "--fixture", "random", "--count", "3",
                         "--seed", "11"])
        assert "FAIL" not in result.stdout

    def test_valid_memo_recompute_matches(self, workspace):
        result = run_ok(["oracle-check", "--fixture", "two-point",
                         "--memo", str(workspace["memo"])])
        assert "recompute-match: PASS" in result.stdout

    def test_tampered_memo_fails_with_oracle_exit_code(self, workspace, tmp_path):
        tampered = tmp_path / "tampered.memo"
        raw = workspace["memo"].read_bytes()
        # overwrite the final stored double (the root threshold field)
        tampered.write_bytes(raw[:-8] + struct.pack("<d", 99.5))
        result = run(["oracle-check", "--fixture", "two-point",
                      "--memo", str(tampered)])
        assert result.exit_code == 4
        assert "recompute-match: FAIL" in result.stdout

    def test_corrupted_memo_is_input_error(self, workspace, tmp_path):
        broken = tmp_path / "broken.memo"
        broken.write_bytes(workspace["memo"].read_bytes()[:40])
        result = run(["oracle-check", "--fixture", "two-point",
                      "--memo", str(broken)])
        assert result.exit_code == 2
        assert "error:" in result.stderr


def test_version_flag():
    assert run_ok(["--version"]).stdout.strip()
