"""Sign classification and binary classification metrics (positive class +1)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    undefined: tuple[str, ...] = ()  # ratios whose denominator was zero (reported as 0)

    @property
    def count(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**{**data, "undefined": tuple(data.get("undefined", ()))})


def classify(outputs) -> np.ndarray:
    """``sign(f)`` with an exact zero mapped to +1."""
    out = np.asarray(outputs, dtype=float)
    return np.where(out >= 0, 1, -1)


def compute_metrics(preds, labels) -> MetricsReport:
    preds = np.asarray(preds).ravel()
    labels = np.asarray(labels).ravel()
    if preds.size == 0 or preds.size != labels.size:
        raise ValidationError(f"need equal nonempty vectors, got {preds.size} and {labels.size}")
    if not (np.isin(preds, (1, -1)).all() and np.isin(labels, (1, -1)).all()):
        raise ValidationError("predictions and labels must be +1 or -1")
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == -1)))
    tn = int(np.sum((preds == -1) & (labels == -1)))
    fn = int(np.sum((preds == -1) & (labels == 1)))
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    if precision + recall == 0:
        undefined.append("f1")
    return MetricsReport((tp + tn) / preds.size, precision, recall, f1, tp, fp, tn, fn, tuple(undefined))
