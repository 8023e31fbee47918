import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treeseed.evaluation import Metric
from treeseed.metrics import UndefinedMetricError, accuracy, auroc, mse, task_metric


def brute_auroc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_mse_values():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([0, 2], [0, 0]) == 2.0
    y = np.random.default_rng(0).standard_normal(500)
    assert mse(np.full_like(y, y.mean()), y) == pytest.approx(np.var(y), rel=1e-12)
    with pytest.raises(ValueError):
        mse([1, 2], [1])


def test_accuracy_values():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([1, 2, 0], [0, 1, 2]) == 0.0
    assert accuracy(np.array([[0.3, 0.3]]), [0]) == 1.0
    with pytest.raises(ValueError):
        accuracy([0, 1], [0])


def test_auroc_values():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])


def test_task_metric_binary_two_columns():
    logits = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 2.0]])
    assert task_metric("binary", logits, [1, 0, 1]) == 1.0


def test_metric_type_ranges():
    Metric("auroc", 0.5)
    with pytest.raises(ValueError):
        Metric("accuracy", 1.5)
    with pytest.raises(ValueError):
        Metric("mse", -1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=200))
def test_auroc_matches_brute_force(pairs):
    scores = [float(s) for s, _ in pairs]
    labels = [int(l) for _, l in pairs]
    if len(set(labels)) < 2:
        return
    assert abs(auroc(scores, labels) - brute_auroc(scores, labels)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_auroc_invariant_under_monotone_maps(seed):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal(50)
    y = rng.integers(0, 2, 50)
    y[:2] = [0, 1]
    base = auroc(s, y)
    assert auroc(np.exp(s), y) == pytest.approx(base, abs=1e-12)
    assert auroc(3 * s + 7, y) == pytest.approx(base, abs=1e-12)
    assert 0.0 <= base <= 1.0
