"""Task metrics: MSE for regression, AUROC for binary and accuracy for
multiclass classification."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


def _pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("empty input")
    return a, b


def mse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean((np.asarray(pred, dtype=np.float64) - target) ** 2))


def accuracy(pred, target) -> float:
    """Fraction of correct labels. ``pred`` may be class indices or a matrix
    of scores, in which case the first maximal column wins."""
    pred = np.asarray(pred)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    pred, target = _pair(pred, target)
    return float(np.mean(pred == target))


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted 1/2."""
    scores, labels = _pair(scores, labels)
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes")
    ranks = rankdata(np.asarray(scores, dtype=np.float64))
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


METRIC_FOR_TASK = {"regression": "mse", "binary": "auroc", "multiclass": "accuracy"}
HIGHER_IS_BETTER = {"mse": False, "auroc": True, "accuracy": True}


def task_metric(task: str, outputs, target) -> float:
    """Score raw model outputs with the metric of ``task``.

    Regression outputs are predictions; classification outputs are per-class
    scores (logits or probabilities) or, for binary tasks, a single margin.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    if task == "regression":
        return mse(outputs.reshape(len(outputs), -1)[:, 0], target)
    if task == "binary":
        if outputs.ndim == 2 and outputs.shape[1] == 2:
            score = outputs[:, 1] - outputs[:, 0]
        else:
            score = outputs.reshape(len(outputs), -1)[:, 0]
        return auroc(score, target)
    return accuracy(outputs, target)
