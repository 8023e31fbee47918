import numpy as np
import pytest

from treeseed.data import ColumnSchema, Dataset


def make_regression(n=200, d=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(n)
    if d >= 3:
        y = y + X[:, 1] * X[:, 2]
    return Dataset(X, y, [ColumnSchema(f"x{j}") for j in range(d)], "regression", 1)


def make_classification(n=200, d=4, n_classes=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    score = X[:, 0] + 0.5 * X[:, 1]
    edges = np.quantile(score, np.linspace(0, 1, n_classes + 1)[1:-1])
    y = np.searchsorted(edges, score)
    task = "binary" if n_classes == 2 else "multiclass"
    return Dataset(X, y, [ColumnSchema(f"x{j}") for j in range(d)], task, n_classes,
                   tuple(str(c) for c in range(n_classes)))


@pytest.fixture
def reg_ds():
    return make_regression()


@pytest.fixture
def bin_ds():
    return make_classification()


@pytest.fixture
def multi_ds():
    return make_classification(n_classes=3, seed=1)
