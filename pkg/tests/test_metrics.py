import numpy as np
import pytest

from mmorient import metrics

from util import metrics_oracle


def test_all_correct_is_one():
    pred = [0, 1, 2, 1]
    assert metrics.accuracy(pred, pred) == 1.0
    assert metrics.micro_f1(pred, pred, 3) == 1.0
    assert metrics.macro_f1(pred, pred, 3) == 1.0
    assert metrics.precision(pred, pred, 3) == 1.0
    assert metrics.recall(pred, pred, 3) == 1.0


def test_binary_all_wrong():
    assert metrics.accuracy([1, 0, 1], [0, 1, 0]) == 0.0
    assert metrics.micro_f1([1, 0, 1], [0, 1, 0], 2) == 0.0


def test_macro_f1_hand_computed_degenerate_predictor():
    # all predicted class 0, labels half and half:
    # class 0: P=1/2, R=1, F1=2/3; class 1: F1=0 -> macro 1/3
    pred = [0, 0, 0, 0]
    true = [0, 0, 1, 1]
    assert abs(metrics.macro_f1(pred, true, 2) - 1 / 3) < 1e-15


def test_confusion_counts():
    c = metrics.confusion_counts([0, 0, 1, 2], [0, 1, 1, 1], 3)
    assert c.tp.tolist() == [1, 1, 0]
    assert c.fp.tolist() == [1, 0, 1]
    assert c.fn.tolist() == [0, 2, 0]
    assert c.total == 4
    assert c.tp.sum() <= c.total


def test_zero_denominator_convention():
    # class 2 never predicted nor labeled: contributes 0 to macro scores
    pred = [0, 1]
    true = [0, 1]
    assert metrics.macro_f1(pred, true, 3) == pytest.approx(2 / 3)
    assert metrics.precision(pred, true, 3) == pytest.approx(2 / 3)


def test_against_oracle_randomized():
    rng = np.random.default_rng(41)
    for _ in range(200):
        n_classes = int(rng.integers(2, 7))
        n = int(rng.integers(1, 60))
        pred = rng.integers(0, n_classes, size=n)
        true = rng.integers(0, n_classes, size=n)
        expected = metrics_oracle(pred.tolist(), true.tolist(), n_classes)
        assert abs(metrics.accuracy(pred, true) - expected["accuracy"]) < 1e-12
        assert abs(metrics.precision(pred, true, n_classes) - expected["precision"]) < 1e-12
        assert abs(metrics.recall(pred, true, n_classes) - expected["recall"]) < 1e-12
        assert abs(metrics.micro_f1(pred, true, n_classes) - expected["micro_f1"]) < 1e-12
        assert abs(metrics.macro_f1(pred, true, n_classes) - expected["macro_f1"]) < 1e-12


def test_micro_f1_equals_accuracy_single_label():
    rng = np.random.default_rng(42)
    for _ in range(500):
        n_classes = int(rng.integers(2, 8))
        n = int(rng.integers(1, 40))
        pred = rng.integers(0, n_classes, size=n)
        true = rng.integers(0, n_classes, size=n)
        assert metrics.micro_f1(pred, true, n_classes) == pytest.approx(
            metrics.accuracy(pred, true), abs=1e-12)


def test_metrics_in_unit_interval_and_permutation_invariant():
    rng = np.random.default_rng(43)
    for _ in range(100):
        n_classes = int(rng.integers(2, 5))
        n = int(rng.integers(2, 30))
        pred = rng.integers(0, n_classes, size=n)
        true = rng.integers(0, n_classes, size=n)
        perm = rng.permutation(n)
        report = metrics.task_metrics(pred, true, n_classes)
        shuffled = metrics.task_metrics(pred[perm], true[perm], n_classes)
        for f in ("accuracy", "precision", "recall", "micro_f1", "macro_f1"):
            value = getattr(report, f)
            assert 0.0 <= value <= 1.0
            assert value == getattr(shuffled, f)


def test_empty_input_raises():
    with pytest.raises(ValueError):
        metrics.accuracy([], [])
    with pytest.raises(ValueError):
        metrics.micro_f1([], [], 2)


def test_length_mismatch_raises():
    with pytest.raises(ValueError):
        metrics.accuracy([0, 1], [0])
