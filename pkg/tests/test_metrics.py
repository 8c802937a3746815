"""Metric definitions, pairwise agreement, and replicate aggregation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepmeter.metrics import (
    EmptyClass,
    NoStrictPairs,
    accuracy,
    aggregate_replicates,
    agreement,
    average_confusions,
    concordance_accuracy,
    confusion,
    mae,
    rmse,
    tpr,
    wae,
)
from stepmeter.pipeline import PairOrder


class TestWae:
    def test_worked_example(self):
        # labels {(1,1), (1,2), (2,2)}: class 1 errs 0.5 on average, class 2 errs 0.
        assert wae([1, 1, 2], [1, 2, 2], k=2) == pytest.approx(0.25)

    def test_balanced_equals_mae(self):
        y_true = [1, 1, 2, 2, 3, 3]
        y_pred = [1, 2, 2, 3, 3, 3]
        assert wae(y_true, y_pred, 3) == pytest.approx(mae(y_true, y_pred, 3), abs=1e-12)

    def test_imbalanced_reweights(self):
        # class 2 has one record with error 1; class 1 has many perfect records.
        y_true = [1] * 9 + [2]
        y_pred = [1] * 9 + [1]
        assert wae(y_true, y_pred, 2) == pytest.approx(0.5)
        assert mae(y_true, y_pred, 2) == pytest.approx(0.1)

    def test_empty_class(self):
        with pytest.raises(EmptyClass):
            wae([1, 1], [1, 2], k=3)

    @settings(max_examples=50)
    @given(st.integers(2, 6), st.integers(1, 5), st.data())
    def test_balanced_property(self, k, per_class, data):
        y_true = [y for y in range(1, k + 1) for _ in range(per_class)]
        y_pred = [
            data.draw(st.integers(1, k), label=f"pred{i}") for i in range(len(y_true))
        ]
        assert wae(y_true, y_pred, k) == pytest.approx(mae(y_true, y_pred, k), abs=1e-12)


class TestBasicMetrics:
    def test_values(self):
        y_true = [1, 2, 3, 4]
        y_pred = [1, 3, 3, 1]
        assert mae(y_true, y_pred, 4) == pytest.approx(1.0)
        assert rmse(y_true, y_pred, 4) == pytest.approx(np.sqrt(10 / 4))
        assert accuracy(y_true, y_pred, 4) == pytest.approx(0.5)

    def test_tpr_macro_recall(self):
        y_true = [1, 1, 2, 2]
        y_pred = [1, 2, 2, 2]
        assert tpr(y_true, y_pred, 2) == pytest.approx((0.5 + 1.0) / 2)

    def test_tpr_skips_empty_class_with_warning(self):
        with pytest.warns(UserWarning, match="label 3"):
            value = tpr([1, 2], [1, 2], k=3)
        assert value == pytest.approx(1.0)

    def test_label_range_validated(self):
        with pytest.raises(ValueError):
            mae([1, 5], [1, 2], k=4)
        with pytest.raises(ValueError):
            mae([], [], k=4)


class TestConfusion:
    def test_raw_counts(self):
        mat = confusion([1, 1, 2], [1, 2, 2], k=2)
        assert mat.tolist() == [[1, 1], [0, 1]]

    def test_category_normalized(self):
        mat = confusion([1, 1, 2], [1, 2, 2], k=2, normalize="category_normalized")
        assert mat.tolist() == [[0.5, 0.5], [0.0, 1.0]]

    def test_normalized_rows_sum_to_one_or_zero(self):
        mat = confusion([1, 1, 3], [1, 2, 3], k=3, normalize="category_normalized")
        sums = mat.sum(axis=1)
        assert sums[0] == pytest.approx(1.0)
        assert sums[1] == 0.0
        assert sums[2] == pytest.approx(1.0)

    def test_average(self):
        a = confusion([1, 2], [1, 2], k=2)
        b = confusion([1, 2], [2, 2], k=2)
        avg = average_confusions([a, b])
        assert avg.tolist() == [[0.5, 0.5], [0.0, 1.0]]


A, B, E = PairOrder.A_LESS, PairOrder.B_LESS, PairOrder.EQUAL


class TestAgreement:
    def test_strict_only_drops_equal(self):
        pred = [A, B, E, A]
        ref = [A, A, B, E]
        # pairs 3 and 4 drop (an Equal on either side); 1 hits, 2 misses.
        assert agreement(pred, ref, "strict_only") == pytest.approx(0.5)

    def test_full_three_way(self):
        pred = [A, B, E, A]
        ref = [A, A, B, E]
        assert agreement(pred, ref, "full") == pytest.approx(0.25)

    def test_no_strict_pairs(self):
        with pytest.raises(NoStrictPairs):
            agreement([E, A], [B, E], "strict_only")

    def test_perfect(self):
        assert agreement([A, B], [A, B], "strict_only") == 1.0


class TestConcordance:
    def test_hand_value(self):
        # model prefers A_LESS with 0.8 support, B_LESS with 0.3 support for a_less
        score = concordance_accuracy([A, B], [0.8, 0.3])
        assert score == pytest.approx((0.8 + 0.7) / 2)

    def test_equal_rejected(self):
        with pytest.raises(ValueError):
            concordance_accuracy([E], [0.5])

    @settings(max_examples=100)
    @given(
        st.lists(
            st.tuples(st.sampled_from([A, B]), st.floats(0, 1, allow_nan=False)),
            min_size=1,
            max_size=30,
        )
    )
    def test_reversal_sums_to_one(self, pairs):
        orders = [o for o, _ in pairs]
        flipped = [B if o is A else A for o in orders]
        supports = [r for _, r in pairs]
        total = concordance_accuracy(orders, supports) + concordance_accuracy(flipped, supports)
        assert total == pytest.approx(1.0, abs=1e-12)


class TestAggregation:
    def test_best_and_significance(self):
        rng = np.random.default_rng(0)
        good = (0.1 + 0.01 * rng.standard_normal(30)).tolist()
        same = (0.1 + 0.01 * rng.standard_normal(30)).tolist()
        bad = (0.9 + 0.01 * rng.standard_normal(30)).tolist()
        out = aggregate_replicates({"good": good, "same": same, "bad": bad})
        best = [m for m, s in out.items() if s.best]
        assert len(best) == 1 and best[0] in ("good", "same")
        assert out["good"].matches_best and out["same"].matches_best
        assert not out["bad"].matches_best
        assert out["bad"].mean == pytest.approx(np.mean(bad))
        assert out["bad"].std == pytest.approx(np.std(bad, ddof=1))

    def test_higher_is_better(self):
        out = aggregate_replicates(
            {"hi": [0.9, 0.91], "lo": [0.1, 0.11]}, higher_is_better=True
        )
        assert out["hi"].best and not out["lo"].best

    def test_single_replicate(self):
        out = aggregate_replicates({"a": [0.5], "b": [0.7]})
        assert out["a"].best
        assert out["a"].std == 0.0
        assert not out["b"].matches_best
