from __future__ import annotations

from dataclasses import dataclass

from tlsverdict.ml_core.c45 import DecisionTreeModel, c45_predict
from tlsverdict.ml_core.dataset import Dataset, EmptyDataset
from tlsverdict.ml_core.tan import TanBayesModel, tan_predict


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
        }


def confusion(truth, predicted, positive: str) -> Metrics:
    tp = fp = fn = tn = 0
    for t, p in zip(truth, predicted):
        if p == positive:
            if t == positive:
                tp += 1
            else:
                fp += 1
        elif t == positive:
            fn += 1
        else:
            tn += 1
    return Metrics(tp, fp, fn, tn)


def predict_label(model, row) -> str:
    if isinstance(model, DecisionTreeModel):
        return c45_predict(model, row).label
    if isinstance(model, TanBayesModel):
        return tan_predict(model, row).label
    return model(row)


def evaluate(model, test: Dataset) -> Metrics:
    """Score ``model`` on ``test`` with the dataset's first label as positive."""
    if not len(test):
        raise EmptyDataset("empty test set")
    predictions = [predict_label(model, row) for row in test.rows]
    return confusion(test.labels, predictions, test.positive_label)
