"""Evaluation metrics: perplexity, accuracy, and consolidated reports.

Perplexity is exp of the mean negative log true-class probability; it is 1
when every prediction is certain and C under uniform guessing over C
classes. Probabilities are floored at 1e-12 before the log.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12

__all__ = ["EvalReport", "perplexity", "accuracy", "evaluate", "REPORT_HEADER"]

REPORT_HEADER = ("model_id", "dataset_id", "num_samples", "num_classes", "perplexity", "accuracy")


def _check_posteriors(posteriors: np.ndarray, labels: np.ndarray):
    posteriors = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (posteriors.shape[0],):
        raise ValueError(
            f"{posteriors.shape[0]} posterior rows but {labels.shape} labels"
        )
    row_sums = posteriors.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6) or np.any(posteriors < 0):
        raise ValueError("posterior rows must be probability vectors (sum to 1 within 1e-6)")
    if labels.size and (labels.min() < 0 or labels.max() >= posteriors.shape[1]):
        raise ValueError("labels out of range for posterior width")
    return posteriors, labels


def perplexity(posteriors: np.ndarray, labels: np.ndarray) -> float:
    posteriors, labels = _check_posteriors(posteriors, labels)
    true_p = posteriors[np.arange(len(labels)), labels]
    return float(np.exp(-np.mean(np.log(np.maximum(true_p, PROB_FLOOR)))))


def accuracy(posteriors: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax matches the label; ties go to the lowest class index."""
    posteriors, labels = _check_posteriors(posteriors, labels)
    return float(np.mean(posteriors.argmax(axis=1) == labels))


@dataclass
class EvalReport:
    perplexity: float
    accuracy: float
    num_samples: int
    num_classes: int
    model_id: str = ""
    dataset_id: str = ""

    def csv_row(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow(
            [self.model_id, self.dataset_id, self.num_samples, self.num_classes,
             repr(self.perplexity), repr(self.accuracy)]
        )
        return buf.getvalue()

    @classmethod
    def from_csv_row(cls, row: str) -> "EvalReport":
        fields = next(csv.reader([row]))
        model_id, dataset_id, n, c, perp, acc = fields
        return cls(float(perp), float(acc), int(n), int(c), model_id, dataset_id)


def evaluate(predictor, dataset, model_id: str = "") -> EvalReport:
    """Evaluate anything with predict_logits(X) on a Dataset."""
    from .mlr import softmax

    posteriors = softmax(predictor.predict_logits(dataset.X))
    return EvalReport(
        perplexity=perplexity(posteriors, dataset.y),
        accuracy=accuracy(posteriors, dataset.y),
        num_samples=dataset.num_samples,
        num_classes=dataset.num_classes,
        model_id=model_id,
        dataset_id=dataset.id,
    )
