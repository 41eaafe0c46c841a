"""
F1 scores for the binary sentiment task
"""
from fractions import Fraction
from typing import Sequence, Tuple

CLASSES = (0, 1)


def _validate(preds: Sequence[int], labels: Sequence[int]) -> Tuple[list, list]:
    preds = [int(p) for p in preds]
    labels = [int(y) for y in labels]
    if not preds:
        raise ValueError("F1 is undefined for empty input")
    if len(preds) != len(labels):
        raise ValueError(f"Length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    bad = {v for v in preds + labels if v not in CLASSES}
    if bad:
        raise ValueError(f"Values must be 0 or 1, got {sorted(bad)}")
    return preds, labels


def class_f1(preds: Sequence[int], labels: Sequence[int], cls: int) -> Fraction:
    """2PR / (P + R) for one class as an exact fraction; 0 when P + R = 0"""
    tp = sum(1 for p, y in zip(preds, labels) if p == cls and y == cls)
    fp = sum(1 for p, y in zip(preds, labels) if p == cls and y != cls)
    fn = sum(1 for p, y in zip(preds, labels) if p != cls and y == cls)
    # with P = tp/(tp+fp) and R = tp/(tp+fn), 2PR/(P+R) reduces to 2tp/(2tp+fp+fn)
    if tp == 0:
        return Fraction(0)
    return Fraction(2 * tp, 2 * tp + fp + fn)


def f1_score(preds: Sequence[int], labels: Sequence[int]) -> float:
    """Macro-averaged F1 over classes 0 and 1"""
    preds, labels = _validate(preds, labels)
    return float(sum(class_f1(preds, labels, c) for c in CLASSES) / len(CLASSES))


def binary_f1_score(preds: Sequence[int], labels: Sequence[int]) -> float:
    """F1 of the positive class only"""
    preds, labels = _validate(preds, labels)
    return float(class_f1(preds, labels, 1))
