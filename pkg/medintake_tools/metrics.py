"""Confusion matrices and precision/recall/F1 for the three intake classes.

The task score pools true positives, false positives and false negatives of
classes 1 and 2 only. A class-3 example predicted as 1 or 2 counts as a false
positive; correct class-3 predictions do not move the score at all."""

import json
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from .corpus import CLASS_LABELS
from .errors import DataError


logger = logging.getLogger(__name__)


MICRO_CLASSES = (1, 2)


class ConfusionMatrix(BaseModel):
    # counts[g - 1][p - 1]: examples with gold class g predicted as p
    counts: List[List[int]]

    def cell(self, gold: int, pred: int) -> int:
        return self.counts[gold - 1][pred - 1]

    def column_total(self, pred: int) -> int:
        return sum(self.cell(g, pred) for g in CLASS_LABELS)

    def row_total(self, gold: int) -> int:
        return sum(self.cell(gold, p) for p in CLASS_LABELS)

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)


class MetricsReport(BaseModel):
    precision_1: float
    precision_2: float
    precision_3: float
    recall_1: float
    recall_2: float
    recall_3: float
    f1_1: float
    f1_2: float
    f1_3: float
    precision_m: float
    recall_m: float
    f1_m: float

    def as_json(self) -> str:
        """Sorted keys, every value fixed to 6 decimals."""

        body = ",\n".join(
            f'  "{key}": {value:.6f}' for key, value in sorted(self.dict().items())
        )

        return "{\n" + body + "\n}\n"


def confusion(gold: Sequence[int], pred: Sequence[int]) -> ConfusionMatrix:

    if len(gold) != len(pred):
        raise DataError(f"{len(gold)} gold labels but {len(pred)} predictions")

    counts = [[0, 0, 0] for _ in CLASS_LABELS]
    for g, p in zip(gold, pred):
        if g not in CLASS_LABELS or p not in CLASS_LABELS:
            raise DataError(f"invalid label pair gold={g} pred={p}")
        counts[g - 1][p - 1] += 1

    return ConfusionMatrix(counts=counts)


def ratio(numerator: int, denominator: int) -> float:

    return numerator / denominator if denominator else 0.0


def f1_score(precision: float, recall: float) -> float:

    if precision + recall == 0:
        return 0.0

    return 2 * precision * recall / (precision + recall)


def per_class_prf(cm: ConfusionMatrix) -> Dict[int, Tuple[float, float, float]]:
    """class -> (precision, recall, F1), 0/0 taken as 0."""

    prf = {}
    for c in CLASS_LABELS:
        precision = ratio(cm.cell(c, c), cm.column_total(c))
        recall = ratio(cm.cell(c, c), cm.row_total(c))
        prf[c] = (precision, recall, f1_score(precision, recall))

    return prf


def micro_prf_12(cm: ConfusionMatrix) -> Tuple[float, float, float]:

    tp = sum(cm.cell(c, c) for c in MICRO_CLASSES)
    fp = sum(cm.column_total(c) - cm.cell(c, c) for c in MICRO_CLASSES)
    fn = sum(cm.row_total(c) - cm.cell(c, c) for c in MICRO_CLASSES)

    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)

    return precision, recall, f1_score(precision, recall)


def metrics_report(cm: ConfusionMatrix) -> MetricsReport:

    values = {}
    for c, (precision, recall, f1) in per_class_prf(cm).items():
        values[f"precision_{c}"] = precision
        values[f"recall_{c}"] = recall
        values[f"f1_{c}"] = f1

    values["precision_m"], values["recall_m"], values["f1_m"] = micro_prf_12(cm)

    return MetricsReport(**values)


def labels_from_probs(probs: np.ndarray) -> np.ndarray:
    """Most probable class per row, the lowest class winning ties."""

    probs = np.asarray(probs)
    if probs.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)

    return np.argmax(probs, axis=-1) + 1


def micro_f1_12(gold: Sequence[int], pred: Sequence[int]) -> float:

    return micro_prf_12(confusion(list(gold), list(pred)))[2]


def score_probs(gold: Sequence[int], probs: np.ndarray) -> float:
    """micro-F1 over classes 1 and 2 of the argmax predictions."""

    return micro_f1_12([int(g) for g in gold], [int(p) for p in labels_from_probs(probs)])


def read_metrics(content: str) -> MetricsReport:

    return MetricsReport(**json.loads(content))
