import numpy as np
import pytest

from ishne.errors import EmptyInput, ShapeMismatch
from ishne.metrics import ConfusionCounts, as_percent, macro_f1, micro_f1, score_report


class TestMicroF1:
    def test_perfect(self):
        assert micro_f1([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0

    def test_all_wrong(self):
        assert micro_f1([1, 0, 0], [0, 1, 2]) == 0.0

    def test_equals_accuracy(self, rng):
        for _ in range(10):
            gold = rng.integers(0, 4, size=30)
            pred = rng.integers(0, 4, size=30)
            assert micro_f1(pred, gold) == pytest.approx(np.mean(pred == gold), abs=1e-15)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            micro_f1([], [])

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatch):
            micro_f1([0, 1], [0])


class TestMacroF1:
    def test_perfect_three_classes(self):
        assert macro_f1([0, 1, 2, 2], [0, 1, 2, 2]) == 1.0

    def test_binary_by_hand(self):
        assert macro_f1([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(0.5)

    def test_class_only_in_predictions_is_excluded(self):
        # class 2 never occurs in gold; classes 0 and 1 have F1 2/3 and 1
        assert macro_f1([0, 2, 1, 1], [0, 0, 1, 1]) == pytest.approx((2 / 3 + 1.0) / 2)

    def test_class_missing_from_predictions_counts_as_zero(self):
        assert macro_f1([0, 0, 0], [0, 0, 1]) == pytest.approx((0.8 + 0.0) / 2)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            macro_f1([], [])


class TestProperties:
    def test_range_and_perfect_iff_equal(self, rng):
        for _ in range(20):
            gold = rng.integers(0, 3, size=12)
            pred = gold.copy()
            assert micro_f1(pred, gold) == macro_f1(pred, gold) == 1.0
            pred[int(rng.integers(0, 12))] += 1
            for value in (micro_f1(pred, gold), macro_f1(pred, gold)):
                assert 0.0 <= value < 1.0

    def test_joint_shuffle_invariance(self, rng):
        gold = rng.integers(0, 3, size=25)
        pred = rng.integers(0, 3, size=25)
        perm = rng.permutation(25)
        assert micro_f1(pred[perm], gold[perm]) == micro_f1(pred, gold)
        assert macro_f1(pred[perm], gold[perm]) == pytest.approx(macro_f1(pred, gold), abs=1e-15)


class TestConfusionCounts:
    def test_counts(self):
        counts = ConfusionCounts.from_predictions([0, 1, 0, 1], [0, 0, 1, 1])
        np.testing.assert_array_equal(counts.tp, [1, 1])
        np.testing.assert_array_equal(counts.fp, [1, 1])
        np.testing.assert_array_equal(counts.fn, [1, 1])
        assert counts.tp.sum() + counts.fn.sum() == 4
        np.testing.assert_allclose(counts.per_class_f1(), [0.5, 0.5])
        assert list(counts.to_frame().columns) == ["class", "tp", "fp", "fn", "f1"]


def test_report_formatting():
    report = score_report([0, 1, 1], [0, 1, 0])
    assert as_percent(report["micro_f1"]) == "66.67"
    assert set(report) == {"micro_f1", "macro_f1"}
