# ishne/metrics.py
# Micro/Macro-F1 for single-label multi-class node classification.

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score

from .errors import EmptyInput, ShapeMismatch


def _check(pred, gold):
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    gold = np.asarray(gold, dtype=np.int64).reshape(-1)
    if pred.shape != gold.shape:
        raise ShapeMismatch(f"{len(pred)} predictions for {len(gold)} gold labels")
    if len(gold) == 0:
        raise EmptyInput("no predictions to score")
    return pred, gold


@dataclass
class ConfusionCounts:
    classes: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @classmethod
    def from_predictions(cls, pred, gold):
        pred, gold = _check(pred, gold)
        classes = np.union1d(pred, gold)
        cm = confusion_matrix(gold, pred, labels=classes)
        tp = np.diag(cm)
        return cls(classes=classes, tp=tp, fp=cm.sum(axis=0) - tp, fn=cm.sum(axis=1) - tp)

    def per_class_f1(self):
        denom = 2 * self.tp + self.fp + self.fn
        return np.divide(2.0 * self.tp, denom, out=np.zeros(len(self.tp)), where=denom > 0)

    def to_frame(self):
        return pd.DataFrame(
            {"class": self.classes, "tp": self.tp, "fp": self.fp, "fn": self.fn, "f1": self.per_class_f1()}
        )


def micro_f1(pred: Sequence[int], gold: Sequence[int]) -> float:
    """Pooled-count F1; for one label per node this equals accuracy."""
    pred, gold = _check(pred, gold)
    return float(accuracy_score(gold, pred))


def macro_f1(pred: Sequence[int], gold: Sequence[int]) -> float:
    """Unweighted mean of per-class F1 over the classes present in gold (0/0 counts as 0)."""
    pred, gold = _check(pred, gold)
    present = np.unique(gold)
    return float(f1_score(gold, pred, labels=present, average="macro", zero_division=0))


def as_percent(value: float) -> str:
    return f"{100.0 * value:.2f}"


def score_report(pred: Sequence[int], gold: Sequence[int]) -> Dict[str, float]:
    return {"micro_f1": micro_f1(pred, gold), "macro_f1": macro_f1(pred, gold)}
