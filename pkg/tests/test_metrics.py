from fractions import Fraction

import pytest

from xfer.metrics import binary_f1_score, class_f1, f1_score


def test_perfect_predictions():
    assert f1_score([0, 1, 1, 0], [0, 1, 1, 0]) == 1.0


def test_constant_prediction_on_balanced_labels():
    # class 1: P = 1/2, R = 1 -> 2/3; class 0 never predicted -> 0
    assert f1_score([1, 1, 1, 1], [0, 1, 0, 1]) == pytest.approx(1 / 3)
    assert binary_f1_score([1, 1, 1, 1], [0, 1, 0, 1]) == pytest.approx(2 / 3)


def test_class_f1_is_exact():
    assert class_f1([1, 0, 1, 1, 0], [1, 1, 0, 1, 0], 1) == Fraction(2, 3)


def test_macro_average():
    preds = [1, 1, 0, 0, 1]
    labels = [1, 0, 0, 1, 1]
    # class 1: tp=2 fp=1 fn=1 -> 4/6; class 0: tp=1 fp=1 fn=1 -> 2/4
    assert f1_score(preds, labels) == pytest.approx((4 / 6 + 2 / 4) / 2)


@pytest.mark.parametrize("preds,labels", [([], []), ([0, 1], [0]), ([0, 2], [0, 1])])
def test_invalid_input(preds, labels):
    with pytest.raises(ValueError):
        f1_score(preds, labels)
