"""Tabular datasets: CSV ingestion, label encoding, standardization, folds and
synthetic generators."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, SchemaError

TASKS = ("regression", "binary", "multiclass")


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = "numeric"
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "numeric" and self.levels:
            raise SchemaError(f"numeric column {self.name!r} cannot carry levels")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"column {self.name!r}: duplicate levels")


@dataclass
class Dataset:
    """Feature matrix plus target.

    Categorical columns hold integer codes once `label_encode` has run; before
    that their raw strings live in ``raw_categorical`` and ``X`` holds NaN.
    """

    X: np.ndarray
    y: np.ndarray
    schema: list[ColumnSchema]
    task: str = "regression"
    n_classes: int = 1
    target_levels: tuple[str, ...] = ()
    raw_categorical: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "regression":
            self.y = np.asarray(self.y, dtype=np.float64)
        else:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
                raise ValueError("class index out of range")
        if len(self.y) != len(self.X):
            raise ValueError(f"{len(self.X)} rows in X but {len(self.y)} targets")
        if len(self.schema) != self.X.shape[1]:
            raise ValueError("schema length does not match X columns")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def output_dim(self) -> int:
        return 1 if self.task == "regression" else self.n_classes

    def numeric_columns(self) -> list[int]:
        return [j for j, c in enumerate(self.schema) if c.kind == "numeric"]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        raw = {j: v[rows] for j, v in self.raw_categorical.items()}
        return replace(self, X=self.X[rows], y=self.y[rows], raw_categorical=raw)


@dataclass
class NormStats:
    columns: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    d: int


@dataclass
class FoldPlan:
    k: int
    assignments: np.ndarray
    stratified: bool
    seed: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


# ---------------------------------------------------------------- ingestion


def read_schema(path) -> tuple[list[ColumnSchema], str, str]:
    """Read a schema JSON ``{columns: [{name, kind}], target, task}``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        cols = [ColumnSchema(c["name"], c.get("kind", "numeric"), tuple(c.get("levels", ())))
                for c in doc["columns"]]
        return cols, doc["target"], doc["task"]
    except KeyError as exc:
        raise SchemaError(f"schema file missing key {exc}") from None


def write_schema(path, schema, target: str, task: str) -> None:
    doc = {
        "format_version": 1,
        "columns": [{"name": c.name, "kind": c.kind} for c in schema],
        "target": target,
        "task": task,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_csv(path, schema, target: str, task: str) -> Dataset:
    """Load a comma-separated file with a header row.

    Numeric columns are parsed as floats, categorical ones are kept as strings
    until :func:`label_encode`. Missing values are rejected.
    """
    if task not in TASKS:
        raise SchemaError(f"unknown task {task!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    index = {name: i for i, name in enumerate(header)}
    for col in schema:
        if col.name not in index:
            raise SchemaError(f"column {col.name!r} missing from header of {path}")
    if target not in index:
        raise SchemaError(f"target column {target!r} missing from header of {path}")

    n = len(rows)
    X = np.full((n, len(schema)), np.nan)
    raw = {}
    for j, col in enumerate(schema):
        src = index[col.name]
        if col.kind == "categorical":
            vals = []
            for i, r in enumerate(rows):
                tok = r[src].strip()
                if tok == "":
                    raise DataError(f"row {i + 1}, column {col.name!r}: missing value")
                vals.append(tok)
            raw[j] = np.array(vals, dtype=object)
            continue
        for i, r in enumerate(rows):
            X[i, j] = _parse_float(r[src], i, col.name)

    tcol = index[target]
    ytok = [r[tcol].strip() for r in rows]
    target_levels: tuple[str, ...] = ()
    if task == "regression":
        y = np.array([_parse_float(t, i, target) for i, t in enumerate(ytok)])
        n_classes = 1
    else:
        for i, t in enumerate(ytok):
            if t == "":
                raise DataError(f"row {i + 1}, column {target!r}: missing target")
        target_levels = tuple(sorted(set(ytok), key=_level_key))
        lookup = {lv: c for c, lv in enumerate(target_levels)}
        y = np.array([lookup[t] for t in ytok], dtype=np.int64)
        n_classes = len(target_levels)
        if task == "binary" and n_classes != 2:
            raise DataError(f"binary task but target has {n_classes} levels")
    return Dataset(X, y, list(schema), task, n_classes, target_levels, raw)


def _parse_float(tok: str, row: int, column: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise DataError(f"row {row + 1}, column {column!r}: cannot parse {tok!r} as a number") from None
    if not math.isfinite(v):
        raise DataError(f"row {row + 1}, column {column!r}: non-finite value {tok!r}")
    return v


def _level_key(s: str):
    # numeric-looking class labels sort numerically ("2" < "10"), others lexicographically
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def save_csv(path, ds: Dataset, target: str = "y") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c.name for c in ds.schema] + [target])
        for i in range(ds.n):
            row = []
            for j, c in enumerate(ds.schema):
                if j in ds.raw_categorical:
                    row.append(ds.raw_categorical[j][i])
                else:
                    row.append(repr(float(ds.X[i, j])))
            if ds.task == "regression":
                row.append(repr(float(ds.y[i])))
            else:
                row.append(str(int(ds.y[i])))
            w.writerow(row)


# ------------------------------------------------------------ preprocessing


def label_encode(ds: Dataset, train_rows=None) -> Dataset:
    """Replace categorical strings by integer codes 1..L.

    Columns whose schema already lists levels are encoded against those;
    otherwise levels are the sorted distinct values over ``train_rows``. Values
    outside the level set map to 0.
    """
    if not ds.raw_categorical:
        return ds
    X = ds.X.copy()
    schema = list(ds.schema)
    for j, values in ds.raw_categorical.items():
        col = schema[j]
        levels = col.levels
        if not levels:
            fit_vals = values if train_rows is None else values[np.asarray(train_rows)]
            levels = tuple(sorted(set(fit_vals.tolist())))
            schema[j] = ColumnSchema(col.name, "categorical", levels)
        code = {lv: c + 1 for c, lv in enumerate(levels)}
        X[:, j] = [code.get(v, 0) for v in values]
    return replace(ds, X=X, schema=schema, raw_categorical={})


def normalize_fit(ds: Dataset, train_rows=None) -> NormStats:
    """Per numeric column mean and population standard deviation over the
    training rows."""
    rows = np.arange(ds.n) if train_rows is None else np.asarray(train_rows)
    if rows.size == 0:
        raise ValueError("normalize_fit needs at least one training row")
    cols = np.asarray(ds.numeric_columns(), dtype=np.int64)
    block = ds.X[np.ix_(rows, cols)]
    return NormStats(cols, block.mean(axis=0), block.std(axis=0), ds.d)


def normalize_apply(ds: Dataset, stats: NormStats) -> Dataset:
    if ds.d != stats.d:
        raise ValueError(f"dataset has {ds.d} columns, stats were fitted on {stats.d}")
    X = ds.X.copy()
    cols = stats.columns
    # zero-variance columns are only centred
    scale = np.where(stats.std > 0, stats.std, 1.0)
    X[:, cols] = (X[:, cols] - stats.mean) / scale
    return replace(ds, X=X)


def make_folds(ds: Dataset, k: int, stratified: bool = False, seed: int = 0) -> FoldPlan:
    n = ds.n
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} folds requested for {n} rows")
    rng = np.random.default_rng(seed)
    if stratified and ds.task != "regression":
        order = np.concatenate([rng.permutation(np.flatnonzero(ds.y == c))
                                for c in range(ds.n_classes)])
    else:
        order = rng.permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    # dealing round-robin over the class-grouped order keeps each class and
    # each fold balanced to within one row
    assignments[order] = np.arange(n) % k
    return FoldPlan(k, assignments, bool(stratified and ds.task != "regression"), seed)


def holdout_split(rows, fraction: float, seed: int, y=None) -> tuple[np.ndarray, np.ndarray]:
    """Split ``rows`` into (kept, held_out) with ``fraction`` held out.

    With class labels ``y`` (indexed by row id) the split is stratified.
    """
    rows = np.asarray(rows)
    rng = np.random.default_rng(seed)
    if y is None:
        perm = rng.permutation(rows)
        n_out = int(round(fraction * len(rows)))
        return np.sort(perm[n_out:]), np.sort(perm[:n_out])
    kept, out = [], []
    for c in np.unique(y[rows]):
        grp = rng.permutation(rows[y[rows] == c])
        n_out = int(round(fraction * len(grp)))
        out.append(grp[:n_out])
        kept.append(grp[n_out:])
    return np.sort(np.concatenate(kept)), np.sort(np.concatenate(out))


# --------------------------------------------------------------- generators


def _numeric_schema(d: int) -> list[ColumnSchema]:
    return [ColumnSchema(f"x{j + 1}") for j in range(d)]


def friedman1_target(X: np.ndarray) -> np.ndarray:
    return (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3] + 5.0 * X[:, 4])


def friedman1(n: int, noise_sd: float = 1.0, d_extra: int = 5, seed: int = 0) -> Dataset:
    """Friedman #1 regression problem on [0, 1]^(5 + d_extra)."""
    if n < 1:
        raise ValueError("n must be positive")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, 5 + d_extra))
    y = friedman1_target(X) + noise_sd * rng.standard_normal(n)
    return Dataset(X, y, _numeric_schema(X.shape[1]), "regression", 1)


def xor_labels(X: np.ndarray) -> np.ndarray:
    return (X[:, 0] * X[:, 1] > 0).astype(np.int64)


def xor_classif(n: int, d_extra: int = 3, flip_prob: float = 0.0, seed: int = 0) -> Dataset:
    """Binary XOR of the signs of the first two coordinates, with label noise."""
    if not 0.0 <= flip_prob < 0.5:
        raise ValueError("flip_prob must lie in [0, 0.5)")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, 2 + d_extra))
    y = xor_labels(X)
    flip = rng.random(n) < flip_prob
    y[flip] = 1 - y[flip]
    return Dataset(X, y, _numeric_schema(X.shape[1]), "binary", 2, ("0", "1"))
