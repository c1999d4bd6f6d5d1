from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalReport:
    accuracy: float
    weighted_f1: float
    per_class_f1: np.ndarray
    confusion: np.ndarray  # rows = truth, cols = prediction, raw counts
    support: np.ndarray

    def row_normalized(self) -> np.ndarray:
        """Confusion rows divided by support; rows with zero support are left at 0."""
        sup = self.support[:, None].astype(np.float64)
        return np.divide(self.confusion, sup, out=np.zeros(self.confusion.shape), where=sup > 0)

    def to_dict(self) -> dict:
        return {
            "accuracy": float(self.accuracy),
            "weighted_f1": float(self.weighted_f1),
            "per_class_f1": [float(v) for v in self.per_class_f1],
            "support": [int(v) for v in self.support],
            "confusion": [[int(v) for v in row] for row in self.confusion],
        }


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(probs, axis=1)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def report_from_predictions(y_true, y_pred, n_classes: int) -> EvalReport:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    denom = support + predicted
    # F1 = 2TP / (2TP + FP + FN); a class never seen nor predicted gets 0
    f1 = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    total = support.sum()
    if total == 0:
        raise ValueError("cannot evaluate an empty prediction set")
    acc = tp.sum() / total
    wf1 = float(np.sum(support / total * f1))
    return EvalReport(float(acc), wf1, f1, cm, support)
