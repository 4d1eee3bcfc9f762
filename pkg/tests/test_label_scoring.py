import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxal.errors import EmptyHistogramError
from boxal.label_scoring import (
    EntropyScore,
    LabelHistogram,
    class_probs,
    histogram,
    label_entropy,
    select_top_k1,
)

from helpers import make_record


def brute_probs(counts):
    """Independent oracle: direct softmax over relative frequencies."""
    n = sum(counts)
    exps = [math.exp(c / n) for c in counts]
    total = sum(exps)
    return [e / total for e in exps]


def brute_entropy(counts):
    if sum(counts) == 0:
        return 0.0
    return -sum(p * math.log(p) for p in brute_probs(counts))


def all_histograms(num_classes, max_boxes):
    for n in range(max_boxes + 1):
        for combo in itertools.product(range(n + 1), repeat=num_classes):
            if sum(combo) == n:
                yield combo


class TestClassProbs:
    def test_uniform_counts_give_uniform_probs(self):
        p = class_probs(LabelHistogram((5, 5, 5)))
        assert np.allclose(p, 1.0 / 3.0)
        assert abs(p.sum() - 1.0) < 1e-12

    def test_concentrated_counts_match_hand_softmax(self):
        # counts [10, 0, 0]: softmax(1, 0, 0) = (e, 1, 1) / (e + 2)
        p = class_probs(LabelHistogram((10, 0, 0)))
        e = math.e
        expected = [e / (e + 2), 1 / (e + 2), 1 / (e + 2)]
        assert np.allclose(p, expected, atol=1e-15)

    def test_two_class_balanced(self):
        assert np.allclose(class_probs(LabelHistogram((1, 1))), [0.5, 0.5])

    def test_empty_histogram_signals(self):
        with pytest.raises(EmptyHistogramError):
            class_probs(LabelHistogram((0, 0)))

    def test_probs_positive_and_normalized(self):
        for counts in all_histograms(3, 5):
            if sum(counts) == 0:
                continue
            p = class_probs(LabelHistogram(counts))
            assert (p > 0).all()
            assert abs(p.sum() - 1.0) < 1e-12


class TestLabelEntropy:
    def test_uniform_histogram_is_exactly_ln_c(self):
        assert label_entropy(LabelHistogram((5, 5, 5))) == math.log(3)
        assert label_entropy(LabelHistogram((2, 2))) == math.log(2)
        assert label_entropy(LabelHistogram((7,))) == 0.0

    def test_empty_record_scores_zero(self):
        assert label_entropy(LabelHistogram((0, 0, 0))) == 0.0

    def test_concentrated_matches_hand_computation(self):
        got = label_entropy(LabelHistogram((10, 0, 0)))
        assert abs(got - brute_entropy((10, 0, 0))) < 1e-12

    def test_matches_brute_force_exhaustively(self):
        for c in (1, 2, 3):
            for counts in all_histograms(c, 6):
                got = label_entropy(LabelHistogram(counts))
                assert abs(got - brute_entropy(counts)) < 1e-12, counts

    def test_entropy_bounds(self):
        for counts in all_histograms(3, 6):
            h = label_entropy(LabelHistogram(counts))
            assert 0.0 <= h <= math.log(3) + 1e-15
            if sum(counts) > 0 and len(set(counts)) == 1:
                assert h == math.log(3)

    def test_monotone_concentration(self):
        # Moving one box from a minority class to the majority class never
        # increases the entropy; exhaustive over small histograms.
        for counts in all_histograms(3, 6):
            if sum(counts) == 0:
                continue
            counts = list(counts)
            hi = counts.index(max(counts))
            for lo in range(3):
                if lo == hi or counts[lo] == 0 or counts[lo] > counts[hi]:
                    continue
                moved = counts.copy()
                moved[lo] -= 1
                moved[hi] += 1
                assert (
                    label_entropy(LabelHistogram(tuple(moved)))
                    <= label_entropy(LabelHistogram(tuple(counts))) + 1e-12
                )

    def test_scale_invariance(self):
        for counts in ((1, 2, 0), (1, 1, 1), (3, 1, 2)):
            base = label_entropy(LabelHistogram(counts))
            for k in (2, 5):
                scaled = tuple(k * c for c in counts)
                assert abs(label_entropy(LabelHistogram(scaled)) - base) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=50), min_size=1, max_size=6))
def test_entropy_bounds_property(counts):
    h = label_entropy(LabelHistogram(tuple(counts)))
    assert 0.0 <= h <= math.log(len(counts)) + 1e-12


class TestSelectTopK1:
    def pool_with_entropies(self):
        # Distinct entropies by construction: more balanced -> higher.
        return [
            make_record("e", class_ids=(0, 1, 2)),          # max entropy
            make_record("d", class_ids=(0, 0, 1, 2)),
            make_record("c", class_ids=(0, 0, 1)),
            make_record("b", class_ids=(0, 0, 0, 1)),
            make_record("a", class_ids=(0, 0, 0)),
        ]

    def test_top_two(self):
        ids = select_top_k1(self.pool_with_entropies(), 2, 3)
        assert ids == ["e", "d"]

    def test_saturation_returns_all_sorted(self):
        ids = select_top_k1(self.pool_with_entropies(), 99, 3)
        assert ids == ["e", "d", "c", "b", "a"]

    def test_ties_break_by_cloud_id_independent_of_order(self, rng):
        twins = [make_record(cid, class_ids=(0, 1)) for cid in ("x2", "x1", "x3")]
        ids = select_top_k1(twins, 2, 3)
        shuffled = list(twins)
        rng.shuffle(shuffled)
        assert select_top_k1(shuffled, 2, 3) == ids == ["x1", "x2"]

    def test_permutation_invariance(self, rng):
        pool = [
            make_record(f"r{i}", class_ids=tuple(rng.integers(0, 3, size=rng.integers(0, 5))))
            for i in range(30)
        ]
        ids = select_top_k1(pool, 10, 3)
        perm = list(pool)
        rng.shuffle(perm)
        assert select_top_k1(perm, 10, 3) == ids

    def test_empty_pool(self):
        assert select_top_k1([], 3, 3) == []

    def test_boxless_records_rank_last(self):
        pool = [make_record("empty"), make_record("full", class_ids=(0, 1))]
        assert select_top_k1(pool, 1, 3) == ["full"]

    def test_threads_do_not_change_result(self):
        pool = self.pool_with_entropies()
        assert select_top_k1(pool, 3, 3, threads=4) == select_top_k1(pool, 3, 3)


def test_histogram_counts(rng):
    rec = make_record("a", class_ids=(0, 0, 2, 1, 0))
    hist = histogram(rec, 4)
    assert hist.counts == (3, 1, 1, 0)
    assert hist.n_boxes == 5


def test_entropy_score_shape():
    s = EntropyScore("a", 0.5)
    assert s.cloud_id == "a" and s.entropy == 0.5
