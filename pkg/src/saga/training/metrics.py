"""Confusion-matrix based classification metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True)
class Metrics:
    """Scores derived from one confusion matrix (rows: truth, columns: prediction).

    Macro precision and recall average only over classes with nonzero support.
    """

    confusion: np.ndarray
    class_names: tuple[str, ...]

    @classmethod
    def from_predictions(cls, y_true, y_pred, class_names: Sequence[str]) -> "Metrics":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        n = len(class_names)
        if y_true.shape != y_pred.shape:
            raise ShapeError(f"{y_true.size} labels vs {y_pred.size} predictions")
        if y_true.size and (min(y_true.min(), y_pred.min()) < 0 or max(y_true.max(), y_pred.max()) >= n):
            raise ShapeError(f"class index outside [0, {n})")
        cm = np.zeros((n, n), dtype=np.int64)
        np.add.at(cm, (y_true, y_pred), 1)
        return cls(cm, tuple(class_names))

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def per_class_recall(self) -> np.ndarray:
        sup = self.support
        return np.divide(np.diag(self.confusion), sup, out=np.zeros(len(sup)), where=sup > 0)

    per_class_accuracy = per_class_recall

    @property
    def per_class_precision(self) -> np.ndarray:
        col = self.confusion.sum(axis=0)
        return np.divide(np.diag(self.confusion), col, out=np.zeros(len(col)), where=col > 0)

    @property
    def precision(self) -> float:
        mask = self.support > 0
        return float(self.per_class_precision[mask].mean()) if mask.any() else 0.0

    @property
    def recall(self) -> float:
        mask = self.support > 0
        return float(self.per_class_recall[mask].mean()) if mask.any() else 0.0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "total": self.total,
            "classes": list(self.class_names),
            "per_class_accuracy": self.per_class_recall.tolist(),
            "per_class_precision": self.per_class_precision.tolist(),
            "support": self.support.tolist(),
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(np.asarray(d["confusion"], dtype=np.int64), tuple(d["classes"]))

    def write_confusion_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred", *self.class_names])
            for name, row in zip(self.class_names, self.confusion.tolist()):
                w.writerow([name, *row])

    def write_per_class_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "support", "accuracy", "precision"])
            for name, s, a, p in zip(self.class_names, self.support.tolist(),
                                     self.per_class_recall.tolist(), self.per_class_precision.tolist()):
                w.writerow([name, s, f"{a:.9g}", f"{p:.9g}"])
