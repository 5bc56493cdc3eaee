import numpy as np
import pytest

from privrec.metrics import mrr_at_k, rank_items, recall_at_k


class TestRankItems:
    def test_tie_broken_by_ascending_index(self):
        order = rank_items([0.1, 0.9, 0.9])
        np.testing.assert_array_equal(order, [1, 2, 0])

    def test_all_equal_gives_identity(self):
        np.testing.assert_array_equal(rank_items(np.zeros(5)), np.arange(5))

    def test_matches_naive_sort_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            scores = rng.standard_normal(30)
            naive = sorted(range(30), key=lambda i: (-scores[i], i))
            np.testing.assert_array_equal(rank_items(scores), naive)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            rank_items([0.0, np.nan])
        with pytest.raises(ValueError, match="finite"):
            rank_items([np.inf, 0.0])


class TestRecallAtK:
    def test_hit_at_rank_one(self):
        ranked = np.arange(30)
        assert recall_at_k(ranked, 0, 5) == 1

    def test_miss_just_outside(self):
        ranked = np.arange(30)
        assert recall_at_k(ranked, 20, 20) == 0
        assert recall_at_k(ranked, 19, 20) == 1

    def test_uniform_chance_level(self):
        # random scores, random label over 50 items: hit rate ~ k/50
        rng = np.random.default_rng(5)
        k, n_items, trials = 10, 50, 10**4
        hits = 0
        for _ in range(trials):
            ranked = rank_items(rng.standard_normal(n_items))
            hits += recall_at_k(ranked, int(rng.integers(n_items)), k)
        p = k / n_items
        se = np.sqrt(p * (1 - p) / trials)
        assert abs(hits / trials - p) <= 3 * se

    def test_bad_k(self):
        with pytest.raises(ValueError):
            recall_at_k(np.arange(5), 0, 0)


class TestMrrAtK:
    def test_rank_two(self):
        ranked = np.array([7, 3, 1])
        assert mrr_at_k(ranked, 3, 10) == 0.5

    def test_outside_cutoff_scores_zero(self):
        ranked = np.arange(30)
        assert mrr_at_k(ranked, 10, 10) == 0.0

    def test_rank_one(self):
        assert mrr_at_k(np.array([4, 2]), 4, 5) == 1.0

    def test_never_exceeds_recall(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            ranked = rank_items(rng.standard_normal(20))
            label = int(rng.integers(20))
            k = int(rng.integers(1, 21))
            assert mrr_at_k(ranked, label, k) <= recall_at_k(ranked, label, k)
