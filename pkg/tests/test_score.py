from math import exp, log

import numpy as np
import pytest

from bayesdt import (
    Hyperparams,
    MemoCapExceeded,
    MemoFormatError,
    compute_scores,
    dump_memo,
    load_memo,
    log_beta,
    log_leaf_likelihood,
    memo_stats,
)
from bayesdt.boxes import Split

from conftest import random_dataset


class TestLogBeta:
    def test_hand_values(self):
        assert log_beta([1.0, 1.0]) == pytest.approx(0.0, abs=1e-14)
        assert log_beta([2.0, 3.0]) == pytest.approx(log(1 / 12), abs=1e-12)
        assert log_beta([4.0, 2.0]) == pytest.approx(log(1 / 20), abs=1e-12)
        assert log_beta([1.0, 3.0]) == pytest.approx(log(1 / 3), abs=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            log_beta([1.0, 0.0])
        with pytest.raises(ValueError):
            log_beta([])
        with pytest.raises(ValueError):
            log_beta([[1.0, 2.0]])


class TestLogLeafLikelihood:
    def test_hand_values(self):
        hp = Hyperparams(alpha=(1.0, 1.0))
        assert log_leaf_likelihood([1, 2], hp) == pytest.approx(log(1 / 12), abs=1e-12)
        assert log_leaf_likelihood([0, 0], hp) == pytest.approx(0.0, abs=1e-14)
        assert log_leaf_likelihood([3, 0], hp) == pytest.approx(log(1 / 4), abs=1e-12)

    def test_three_leaf_product(self):
        # the three-leaf worked example: leaves with counts (1,2), (0,2) and
        # (3,1) at unit alpha multiply to exactly 1/720
        hp = Hyperparams(alpha=(1.0, 1.0))
        total = (
            log_leaf_likelihood([1, 2], hp)
            + log_leaf_likelihood([0, 2], hp)
            + log_leaf_likelihood([3, 1], hp)
        )
        assert exp(total) == pytest.approx(1 / 720, rel=1e-12)

    def test_dimension_mismatch(self):
        hp = Hyperparams(alpha=(1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            log_leaf_likelihood([1, 2], hp)

    def test_matches_ratio_identity(self):
        # appending one more label of class c multiplies the likelihood by
        # the posterior-predictive mass of c — a useful cross-check
        hp = Hyperparams(alpha=(0.5, 2.0))
        base = log_leaf_likelihood([4, 1], hp)
        grown = log_leaf_likelihood([5, 1], hp)
        assert exp(grown - base) == pytest.approx((4 + 0.5) / (5 + 2.5), rel=1e-12)


class TestHyperparams:
    def test_broadcast(self):
        hp = Hyperparams.for_classes(3, alpha=2.0, ln_phi=1.0)
        assert hp.alpha == (2.0, 2.0, 2.0)

    def test_vector_passthrough(self):
        hp = Hyperparams.for_classes(2, alpha=[1.0, 3.0])
        assert hp.alpha == (1.0, 3.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            Hyperparams(alpha=(0.0, 1.0))
        with pytest.raises(ValueError):
            Hyperparams(alpha=(1.0,), ln_phi=float("inf"))
        with pytest.raises(ValueError):
            Hyperparams.for_classes(3, alpha=[1.0, 2.0])


class TestComputeScores:
    def test_single_point(self, single_point):
        data, hp = single_point
        memo = compute_scores(data, hp)
        assert len(memo) == 1
        entry = memo.entry(memo.root_mask)
        assert exp(entry.log_mass) == pytest.approx(0.5, rel=1e-12)
        assert entry.log_mass == entry.log_leaf == entry.log_best
        assert entry.best_action is None

    def test_two_point_hand_values(self, two_point):
        data, hp = two_point
        memo = compute_scores(data, hp)
        assert len(memo) == 3
        entry = memo.entry(memo.root_mask)
        assert entry.log_leaf == pytest.approx(log(1 / 6), abs=1e-12)
        assert exp(entry.log_mass) == pytest.approx(1 / 6 + exp(-2) / 4, rel=1e-12)
        assert exp(entry.log_best) == pytest.approx(1 / 6, rel=1e-12)
        assert entry.best_action is None  # Stop wins the max

    def test_xor_grid_penalty_regimes(self, xor_grid):
        # at ln_phi=2 the leaf penalty e^2 swamps four points of signal:
        # L(root)=1/30 beats e^-2*(1/6)^2, so the MAP tree is the lone leaf
        data, hp = xor_grid
        memo = compute_scores(data, hp)
        entry = memo.entry(memo.root_mask)
        assert entry.log_leaf == pytest.approx(log(1 / 30), abs=1e-12)
        assert entry.best_action is None
        # with no penalty the full XOR tree wins: Q_max(child)=1/4, and
        # (1/4)^2 > 1/30; both features tie, so the smallest feature is kept
        free = compute_scores(data, Hyperparams(alpha=(1.0, 1.0), ln_phi=0.0))
        assert free.entry(free.root_mask).best_action == Split(0, 0.5)
        assert exp(free.entry(free.root_mask).log_best) == pytest.approx(
            1 / 16, rel=1e-12
        )

    def test_monotone_bounds(self):
        rng = np.random.default_rng(10)
        for _ in range(25):
            data = random_dataset(rng)
            hp = Hyperparams.for_classes(data.class_count, ln_phi=float(rng.uniform(0, 3)))
            memo = compute_scores(data, hp)
            assert np.all(memo.log_leaf <= memo.log_best + 1e-12)
            assert np.all(memo.log_best <= memo.log_mass + 1e-12)

    def test_alpha_dimension_checked(self, two_point):
        data, _ = two_point
        with pytest.raises(ValueError):
            compute_scores(data, Hyperparams(alpha=(1.0, 1.0, 1.0)))

    def test_memo_cap(self):
        rng = np.random.default_rng(11)
        data = random_dataset(rng, n=6, d=2, levels=4)
        hp = Hyperparams.for_classes(2)
        with pytest.raises(MemoCapExceeded):
            compute_scores(data, hp, memo_cap=3)

    def test_key_sufficiency_under_rescaling(self):
        rng = np.random.default_rng(12)
        data = random_dataset(rng, n=6, d=2, levels=3)
        from bayesdt import Dataset

        scaled = Dataset(
            features=data.features * 10.0 - 3.0,
            labels=data.labels,
            class_count=data.class_count,
        )
        hp = Hyperparams.for_classes(2)
        a = compute_scores(data, hp)
        b = compute_scores(scaled, hp)
        assert set(a.index_of) == set(b.index_of)
        for mask in a.index_of:
            assert a.log_mass[a.row(mask)] == b.log_mass[b.row(mask)]

    def test_determinism(self, xor_grid):
        data, hp = xor_grid
        a = compute_scores(data, hp)
        b = compute_scores(data, hp)
        assert a.masks == b.masks
        np.testing.assert_array_equal(a.log_mass, b.log_mass)
        np.testing.assert_array_equal(a.best_feature, b.best_feature)

    def test_children_closed(self, iris_bucketized):
        # every best action's children must themselves be memoized
        data = iris_bucketized
        hp = Hyperparams.for_classes(3)
        memo = compute_scores(data, hp)
        checked = 0
        for mask in memo.masks[-50:]:
            kids = memo.best_children(mask)
            if kids is not None:
                left, right = kids
                assert left in memo and right in memo
                checked += 1
        assert checked > 0


class TestMemoStats:
    def test_entry_counts(self, single_point, two_point):
        data, hp = single_point
        assert memo_stats(compute_scores(data, hp)).entry_count == 1
        data, hp = two_point
        stats = memo_stats(compute_scores(data, hp))
        assert stats.entry_count == 3
        assert stats.max_stack_depth >= 2
        assert 0.0 <= stats.hit_rate <= 1.0


class TestMemoDump:
    def test_round_trip(self, tmp_path, xor_grid):
        data, hp = xor_grid
        memo = compute_scores(data, hp)
        path = tmp_path / "memo.bin"
        dump_memo(memo, path)
        back = load_memo(path)
        assert back.masks == memo.masks
        np.testing.assert_array_equal(back.log_mass, memo.log_mass)
        np.testing.assert_array_equal(back.log_leaf, memo.log_leaf)
        np.testing.assert_array_equal(back.best_feature, memo.best_feature)
        np.testing.assert_array_equal(
            back.best_threshold, memo.best_threshold
        )
        np.testing.assert_array_equal(back.data.features, data.features)
        np.testing.assert_array_equal(back.data.labels, data.labels)
        assert back.params == memo.params
        assert back.stats == memo.stats

    def test_dump_bytes_reproducible(self, tmp_path, two_point):
        data, hp = two_point
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        dump_memo(compute_scores(data, hp), p1)
        dump_memo(compute_scores(data, hp), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corruption_detected(self, tmp_path, two_point):
        data, hp = two_point
        path = tmp_path / "memo.bin"
        dump_memo(compute_scores(data, hp), path)
        raw = bytearray(path.read_bytes())

        truncated = tmp_path / "trunc.bin"
        truncated.write_bytes(bytes(raw[:-7]))
        with pytest.raises(MemoFormatError):
            load_memo(truncated)

        raw[0] ^= 0xFF
        bad_magic = tmp_path / "magic.bin"
        bad_magic.write_bytes(bytes(raw))
        with pytest.raises(MemoFormatError):
            load_memo(bad_magic)

        with pytest.raises(MemoFormatError):
            load_memo(tmp_path / "missing.bin")

    def test_bucketed_metadata_survives(self, tmp_path, iris_bucketized):
        hp = Hyperparams.for_classes(3)
        memo = compute_scores(iris_bucketized, hp)
        path = tmp_path / "iris.bin"
        dump_memo(memo, path)
        back = load_memo(path)
        assert back.data.feature_names == iris_bucketized.feature_names
        assert back.data.label_names == iris_bucketized.label_names
        for mine, theirs in zip(back.data.bucket_stages, iris_bucketized.bucket_stages):
            assert len(mine) == len(theirs)
            for e1, e2 in zip(mine, theirs):
                np.testing.assert_array_equal(e1, e2)
