"""F1 scores and accuracy with explicit handling of unanswered predictions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, ValidationError

UNANSWERED = None


@dataclass(frozen=True)
class ClassificationMetrics:
    weighted_f1: float
    macro_f1: float
    true_accuracy: float
    classes: tuple
    per_class_f1: tuple
    confusion: np.ndarray  # rows: truth classes; columns: classes + unanswered
    n_unanswered: int

    def to_dict(self) -> dict:
        return {
            "f1.weighted": self.weighted_f1,
            "f1.macro": self.macro_f1,
            "accuracy.true": self.true_accuracy,
            "classes": list(self.classes),
            "confusion": self.confusion.tolist(),
            "n_unanswered": self.n_unanswered,
        }


def classification_metrics(pred, truth, labels=None) -> ClassificationMetrics:
    """Score predictions where ``None`` marks an unanswered case.

    True accuracy counts unanswered cases as wrong; both F1 variants use the
    answered pairs only. ``labels`` fixes the class list; classes absent from
    both sides then score F1 = 0 with zero support weight.
    """
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise ShapeError(f"{len(pred)} predictions for {len(truth)} labels")
    if not truth:
        raise ValidationError("classification metrics need at least one sample")
    if labels is None:
        labels = sorted(set(truth) | {p for p in pred if p is not UNANSWERED})
    classes = tuple(labels)
    index = {c: i for i, c in enumerate(classes)}
    for v in list(truth) + [p for p in pred if p is not UNANSWERED]:
        if v not in index:
            raise ValidationError(f"label {v!r} is not in the class list")
    n_c = len(classes)
    conf = np.zeros((n_c, n_c + 1), dtype=np.int64)
    for p, t in zip(pred, truth):
        conf[index[t], n_c if p is UNANSWERED else index[p]] += 1
    answered = conf[:, :n_c]
    tp = np.diag(answered).astype(np.float64)
    support = answered.sum(axis=1).astype(np.float64)
    predicted = answered.sum(axis=0).astype(np.float64)
    denom = support + predicted  # 2tp + fp + fn
    f1 = np.divide(2.0 * tp, denom, out=np.zeros(n_c), where=denom > 0)
    macro = float(f1.mean())
    weighted = float(np.dot(f1, support) / support.sum()) if support.sum() > 0 else 0.0
    return ClassificationMetrics(
        weighted_f1=weighted,
        macro_f1=macro,
        true_accuracy=float(tp.sum() / len(truth)),
        classes=classes,
        per_class_f1=tuple(float(v) for v in f1),
        confusion=conf,
        n_unanswered=int(conf[:, n_c].sum()),
    )
