"""Decision trees and tree ensembles: CART, random forests, completely-random
trees, gradient boosting and deep-forest cascades.

Trees use a flat encoding. Inner nodes are numbered 0..N-1 in preorder and
leaves 0..N in left-to-right order; a child pointer ``c >= 0`` names an inner
node and ``c < 0`` names leaf ``~c``. An input goes left when
``x[feature] <= threshold``.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import ColumnSchema, Dataset

KINDS = ("single", "forest", "gbdt", "deep_forest")


@dataclass
class TreeFitConfig:
    max_depth: int = 6
    n_estimators: int = 10
    max_features: float = 1.0
    min_samples_leaf: int = 1
    eta: float = 0.1
    reg_lambda: float = 0.0
    forest_depth: int = 1
    forests: tuple[str, ...] = ("rf", "crf")
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int | None = None

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not 0.0 < self.max_features <= 1.0:
            raise ValueError("max_features must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if self.forest_depth < 1:
            raise ValueError("forest_depth must be >= 1")
        for tag in self.forests:
            if tag not in ("rf", "crf"):
                raise ValueError(f"unknown forest type {tag!r}")
        self.forests = tuple(self.forests)


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    values: np.ndarray
    n_features: int

    @property
    def n_inner(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return len(self.values)

    @property
    def output_dim(self) -> int:
        return self.values.shape[1]

    def leaf_paths(self) -> list[tuple[list[int], list[int]]]:
        """For every leaf, the inner nodes whose left (resp. right) subtree
        contains it."""
        paths: list = [None] * self.n_leaves
        if self.n_inner == 0:
            paths[0] = ([], [])
            return paths
        stack = [(0, [], [])]
        while stack:
            node, neg, pos = stack.pop()
            for child, n2, p2 in ((self.left[node], neg + [node], pos),
                                  (self.right[node], neg, pos + [node])):
                if child < 0:
                    paths[~child] = (n2, p2)
                else:
                    stack.append((child, n2, p2))
        return paths

    def depth(self) -> int:
        return max((len(n) + len(p) for n, p in self.leaf_paths()), default=0)


@dataclass
class TreeModel:
    """Weighted sum of trees plus an offset, or a deep-forest cascade.

    For ``single``, ``forest`` and ``gbdt`` the prediction is
    ``base + sum_t weights[t] * tree_t(x)`` where a tree with
    ``targets[t] = c >= 0`` only feeds output ``c``.
    """

    kind: str
    trees: list[Tree]
    weights: np.ndarray
    base: np.ndarray
    n_features: int
    output_dim: int
    task: str = "regression"
    targets: np.ndarray | None = None
    eta: float = 1.0
    tag: str = ""
    layers: list[list["TreeModel"]] = field(default_factory=list)
    best_layer: int = 0
    layer_scores: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.base = np.asarray(self.base, dtype=np.float64).reshape(self.output_dim)
        if self.targets is None:
            self.targets = np.full(len(self.trees), -1, dtype=np.int64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        for t in self.trees:
            if t.n_features != self.n_features:
                raise ValueError("all trees must share the input dimension")

    @property
    def retained_layers(self) -> list[list["TreeModel"]]:
        return self.layers[: self.best_layer + 1]


# ------------------------------------------------------------------ helpers


def n_threads(n_jobs: int | None = None) -> int:
    if n_jobs is not None:
        return max(1, int(n_jobs))
    env = os.environ.get("TREESEED_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def tree_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for tree ``index`` of an ensemble seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), int(index)]))


def _parallel_map(fn, items, n_jobs):
    items = list(items)
    workers = min(n_threads(n_jobs), len(items))
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _resolve(ds: Dataset, rows):
    if rows is None:
        rows = np.arange(ds.n)
    rows = np.asarray(rows)
    if rows.size == 0:
        raise ValueError("cannot fit on an empty row set")
    return ds.X[rows], ds.y[rows]


def _one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


# ------------------------------------------------------------ tree growing


class _Builder:
    """Accumulates the flat arrays of a tree during recursive growth."""

    def __init__(self, n_features):
        self.n_features = n_features
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.values = []

    def leaf(self, value) -> int:
        self.values.append(np.asarray(value, dtype=np.float64))
        return ~(len(self.values) - 1)

    def inner(self, feature, threshold) -> int:
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(0)
        self.right.append(0)
        return len(self.feature) - 1

    def build(self) -> Tree:
        return Tree(
            np.array(self.feature, dtype=np.int64),
            np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.int64),
            np.array(self.right, dtype=np.int64),
            np.vstack(self.values),
            self.n_features,
        )


def _best_split(X, G, h, features, lam, min_leaf):
    """Exhaustive search of the split maximizing
    ``|G_L|^2/(H_L+lam) + |G_R|^2/(H_R+lam) - |G|^2/(H+lam)``.

    Returns ``(feature, threshold, gain)`` or None when no admissible split
    exists. Ties keep the lowest feature index, then the lowest threshold.
    """
    n = len(X)
    Gtot = G.sum(axis=0)
    Htot = h.sum()
    parent = (Gtot @ Gtot) / (Htot + lam)
    lo, hi = min_leaf - 1, n - min_leaf  # split after sorted position i, lo <= i < hi
    if hi <= lo:
        return None
    best = None
    for f in features:
        x = X[:, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cand = np.flatnonzero(xs[lo:hi] < xs[lo + 1:hi + 1]) + lo
        if cand.size == 0:
            continue
        GL = np.cumsum(G[order], axis=0)[cand]
        HL = np.cumsum(h[order])[cand]
        GR = Gtot - GL
        HR = Htot - HL
        with np.errstate(divide="ignore", invalid="ignore"):
            score = (GL * GL).sum(axis=1) / (HL + lam) + (GR * GR).sum(axis=1) / (HR + lam)
        score = np.where(np.isfinite(score), score, -np.inf)
        j = int(np.argmax(score))
        gain = score[j] - parent
        if best is None or gain > best[2]:
            i = cand[j]
            t = 0.5 * (xs[i] + xs[i + 1])
            if not xs[i] <= t < xs[i + 1]:
                t = xs[i]
            best = (int(f), float(t), float(gain))
    return best


def _grow_greedy(X, G, h, cfg: TreeFitConfig, rng, lam, leaf_fn, center):
    n, d = X.shape
    k = min(d, max(1, math.ceil(cfg.max_features * d)))
    b = _Builder(d)

    def grow(idx, depth):
        Gn, hn = G[idx], h[idx]
        pure = bool(np.all(Gn == Gn[0]))
        if depth >= cfg.max_depth or pure or len(idx) < 2 * cfg.min_samples_leaf:
            return b.leaf(leaf_fn(Gn, hn))
        feats = np.arange(d) if k == d else np.sort(rng.choice(d, size=k, replace=False))
        Gs = Gn - Gn.mean(axis=0) if center else Gn
        split = _best_split(X[idx], Gs, hn, feats, lam, cfg.min_samples_leaf)
        if split is None:
            return b.leaf(leaf_fn(Gn, hn))
        f, t, _ = split
        node = b.inner(f, t)
        go_left = X[idx, f] <= t
        b.left[node] = grow(idx[go_left], depth + 1)
        b.right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(n), 0)
    return b.build()


def _mean_leaf(Gn, hn):
    return Gn.sum(axis=0) / hn.sum()


def _targets(ds: Dataset, y):
    if ds.task == "regression":
        return y.reshape(-1, 1).astype(np.float64)
    return _one_hot(y, ds.n_classes)


def fit_cart(ds: Dataset, rows=None, cfg: TreeFitConfig | None = None, rng=None) -> Tree:
    """Greedy CART: variance reduction for regression, Gini decrease for
    classification. Leaves hold the mean target or the class frequencies."""
    cfg = cfg or TreeFitConfig()
    X, y = _resolve(ds, rows)
    rng = rng if rng is not None else tree_rng(cfg.seed, 0)
    G = _targets(ds, y)
    return _grow_greedy(X, G, np.ones(len(X)), cfg, rng, 0.0, _mean_leaf,
                        center=ds.task == "regression")


def fit_completely_random_tree(ds: Dataset, rows=None, cfg: TreeFitConfig | None = None,
                               rng=None) -> Tree:
    """Tree with uniformly random split features and thresholds, grown to
    ``max_depth`` or purity."""
    cfg = cfg or TreeFitConfig()
    X, y = _resolve(ds, rows)
    rng = rng if rng is not None else tree_rng(cfg.seed, 0)
    G = _targets(ds, y)
    d = X.shape[1]
    b = _Builder(d)

    def grow(idx, depth):
        Gn = G[idx]
        if depth >= cfg.max_depth or bool(np.all(Gn == Gn[0])):
            return b.leaf(Gn.mean(axis=0))
        for _ in range(d):
            f = int(rng.integers(d))
            col = X[idx, f]
            lo, hi = col.min(), col.max()
            if hi > lo:
                t = float(rng.uniform(lo, hi))
                if t >= hi:
                    t = float(np.nextafter(hi, lo))
                break
        else:
            return b.leaf(Gn.mean(axis=0))
        node = b.inner(f, t)
        go_left = col <= t
        b.left[node] = grow(idx[go_left], depth + 1)
        b.right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(len(X)), 0)
    return b.build()


# --------------------------------------------------------------- prediction


def _as_matrix(X, n_features):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X, single


def apply_tree(tree: Tree, X) -> np.ndarray:
    """Leaf index reached by each row of ``X``."""
    X, single = _as_matrix(X, tree.n_features)
    n = len(X)
    leaf = np.zeros(n, dtype=np.int64)
    if tree.n_inner == 0:
        return leaf[0] if single else leaf
    node = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        nd = node[active]
        go_left = X[active, tree.feature[nd]] <= tree.threshold[nd]
        nxt = np.where(go_left, tree.left[nd], tree.right[nd])
        done = nxt < 0
        leaf[active[done]] = ~nxt[done]
        node[active[~done]] = nxt[~done]
        active = active[~done]
    return leaf[0] if single else leaf


def predict_tree(tree: Tree, X) -> np.ndarray:
    X, single = _as_matrix(X, tree.n_features)
    out = tree.values[apply_tree(tree, X)]
    return out[0] if single else out


def _predict_sum(model: TreeModel, X) -> np.ndarray:
    out = np.tile(model.base, (len(X), 1))
    for tree, w, c in zip(model.trees, model.weights, model.targets):
        pred = predict_tree(tree, X)
        if c < 0:
            out += w * pred
        else:
            out[:, c] += w * pred[:, 0]
    return out


def _forest_outputs(forests, X):
    return [predict_model(f, X) for f in forests]


def predict_model(model: TreeModel, X) -> np.ndarray:
    """Raw model output: leaf value / average / boosted margin / cascade mean."""
    X, single = _as_matrix(X, model.n_features)
    if model.kind != "deep_forest":
        out = _predict_sum(model, X)
    else:
        feats = X
        for j, forests in enumerate(model.retained_layers):
            outs = _forest_outputs(forests, feats)
            if j == model.best_layer:
                out = np.mean(outs, axis=0)
            else:
                feats = np.hstack([X] + outs)
    return out[0] if single else out


def predict_proba(model: TreeModel, X) -> np.ndarray:
    """Class probabilities for classification models (margins are squashed
    for boosted ensembles)."""
    out = predict_model(model, X)
    if model.task == "regression":
        raise ValueError("predict_proba on a regression model")
    if model.kind == "gbdt":
        if model.output_dim == 1:
            p = 1.0 / (1.0 + np.exp(-out[..., 0]))
            return np.stack([1 - p, p], axis=-1)
        z = out - out.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    return out


# ------------------------------------------------------------------ forests


def _fit_forest(ds, rows, cfg, seed, tag):
    X, y = _resolve(ds, rows)
    sub = Dataset(X, y, ds.schema, ds.task, ds.n_classes)
    n = len(X)

    def one(t):
        rng = tree_rng(seed, t)
        if tag == "crf":
            return fit_completely_random_tree(sub, None, cfg, rng)
        idx = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        return fit_cart(sub, idx, cfg, rng)

    trees = _parallel_map(one, range(cfg.n_estimators), cfg.n_jobs)
    M = len(trees)
    return TreeModel("forest", trees, np.full(M, 1.0 / M), np.zeros(ds.output_dim),
                     ds.d, ds.output_dim, ds.task, tag=tag)


def fit_random_forest(ds: Dataset, rows=None, cfg: TreeFitConfig | None = None) -> TreeModel:
    """Bagged CART trees with per-node feature subsampling, averaged."""
    cfg = cfg or TreeFitConfig()
    return _fit_forest(ds, rows, cfg, cfg.seed, "rf")


def fit_completely_random_forest(ds: Dataset, rows=None, cfg: TreeFitConfig | None = None) -> TreeModel:
    cfg = cfg or TreeFitConfig()
    return _fit_forest(ds, rows, cfg, cfg.seed, "crf")


# ----------------------------------------------------------------- boosting


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def gbdt_loss(task: str, margins: np.ndarray, y: np.ndarray) -> float:
    """Training objective of the boosted ensemble: half squared error,
    logistic loss or softmax cross-entropy."""
    if task == "regression":
        return float(0.5 * np.mean((margins[:, 0] - y) ** 2))
    if task == "binary":
        z = margins[:, 0]
        return float(np.mean(np.logaddexp(0.0, z) - y * z))
    z = margins - margins.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(len(y)), y]))


def fit_gbdt(ds: Dataset, rows=None, cfg: TreeFitConfig | None = None) -> TreeModel:
    """Gradient boosting with Newton leaf values ``-sum(g) / (sum(h) + lambda)``.

    Regression and binary tasks grow one tree per round; multiclass tasks grow
    one tree per class per round on the softmax gradients.
    """
    cfg = cfg or TreeFitConfig()
    X, y = _resolve(ds, rows)
    n = len(X)
    task = ds.task
    K = 1 if task in ("regression", "binary") else ds.n_classes
    if task == "regression":
        base = np.array([y.mean()])
    elif task == "binary":
        p = np.clip(y.mean(), 1e-12, 1 - 1e-12)
        base = np.array([math.log(p / (1 - p))])
    else:
        base = np.zeros(K)
    F = np.tile(base, (n, 1))
    lam = cfg.reg_lambda

    def newton_leaf(Gn, hn):
        return Gn.sum(axis=0) / max(hn.sum() + lam, 1e-300)

    trees, targets = [], []
    history = [gbdt_loss(task, F, y)]
    for r in range(cfg.n_estimators):
        if task == "regression":
            grads = [(F[:, 0] - y, np.ones(n))]
        elif task == "binary":
            p = _sigmoid(F[:, 0])
            grads = [(p - y, p * (1 - p))]
        else:
            P = _softmax(F)
            Y = _one_hot(y, K)
            grads = [(P[:, c] - Y[:, c], P[:, c] * (1 - P[:, c])) for c in range(K)]
        for c, (g, hess) in enumerate(grads):
            rng = tree_rng(cfg.seed, r * K + c)
            tree = _grow_greedy(X, -g.reshape(-1, 1), hess, cfg, rng, lam, newton_leaf,
                                center=False)
            trees.append(tree)
            targets.append(c if K > 1 else -1)
            F[:, c] += cfg.eta * predict_tree(tree, X)[:, 0]
        history.append(gbdt_loss(task, F, y))
    return TreeModel("gbdt", trees, np.full(len(trees), cfg.eta), base, ds.d, K, task,
                     targets=np.array(targets, dtype=np.int64), eta=cfg.eta,
                     train_loss=history)


# -------------------------------------------------------------- deep forest


def _layer_seed(seed: int, layer: int, k: int) -> int:
    if layer == 0 and k == 0:
        return seed
    return int(np.random.SeedSequence([int(seed) & (2**63 - 1), 7919, layer, k]).generate_state(1)[0])


def _score(task, out, y):
    if task == "regression":
        return -float(np.mean((out[:, 0] - y) ** 2))
    return float(np.mean(np.argmax(out, axis=1) == y))


def fit_deep_forest(ds: Dataset, rows=None, cfg: TreeFitConfig | None = None, val_rows=None) -> TreeModel:
    """Cascade of forest layers; layer j > 1 sees the raw features concatenated
    with the previous layer's forest outputs. The layer with the best
    validation score is retained."""
    cfg = cfg or TreeFitConfig()
    if val_rows is None or len(val_rows) == 0:
        raise ValueError("fit_deep_forest needs a non-empty validation set")
    X, y = _resolve(ds, rows)
    Xv, yv = ds.X[np.asarray(val_rows)], ds.y[np.asarray(val_rows)]
    feats, feats_v = X, Xv
    layers, scores = [], []
    for j in range(cfg.forest_depth):
        schema = [ColumnSchema(f"f{i}") for i in range(feats.shape[1])]
        sub = Dataset(feats, y, schema, ds.task, ds.n_classes)
        forests = [_fit_forest(sub, None, cfg, _layer_seed(cfg.seed, j, k), tag)
                   for k, tag in enumerate(cfg.forests)]
        outs = [predict_model(f, feats) for f in forests]
        outs_v = [predict_model(f, feats_v) for f in forests]
        layers.append(forests)
        scores.append(_score(ds.task, np.mean(outs_v, axis=0), yv))
        feats = np.hstack([X] + outs)
        feats_v = np.hstack([Xv] + outs_v)
    best = int(np.argmax(scores))
    return TreeModel("deep_forest", [], [], np.zeros(ds.output_dim), ds.d, ds.output_dim,
                     ds.task, layers=layers, best_layer=best, layer_scores=scores)


def fit_model(method: str, ds: Dataset, rows=None, cfg: TreeFitConfig | None = None,
              val_rows=None) -> TreeModel:
    """Dispatch on a method name in {cart, rf, crf, gbdt, df}."""
    cfg = cfg or TreeFitConfig()
    if method == "cart":
        tree = fit_cart(ds, rows, cfg)
        return TreeModel("single", [tree], [1.0], np.zeros(ds.output_dim), ds.d,
                         ds.output_dim, ds.task)
    if method == "rf":
        return fit_random_forest(ds, rows, cfg)
    if method == "crf":
        return fit_completely_random_forest(ds, rows, cfg)
    if method == "gbdt":
        return fit_gbdt(ds, rows, cfg)
    if method == "df":
        return fit_deep_forest(ds, rows, cfg, val_rows)
    raise ValueError(f"unknown tree method {method!r}")


# ------------------------------------------------------------ serialization


def tree_to_dict(tree: Tree) -> dict:
    return {
        "n_features": tree.n_features,
        "nodes": [{"feature": int(f), "threshold": float(t), "left": int(l), "right": int(r)}
                  for f, t, l, r in zip(tree.feature, tree.threshold, tree.left, tree.right)],
        "leaves": [{"values": [float(v) for v in row]} for row in tree.values],
    }


def tree_from_dict(doc: dict) -> Tree:
    nodes = doc["nodes"]
    return Tree(
        np.array([n["feature"] for n in nodes], dtype=np.int64),
        np.array([float(n["threshold"]) for n in nodes], dtype=np.float64),
        np.array([n["left"] for n in nodes], dtype=np.int64),
        np.array([n["right"] for n in nodes], dtype=np.int64),
        np.array([lf["values"] for lf in doc["leaves"]], dtype=np.float64),
        int(doc["n_features"]),
    )


def model_to_dict(model: TreeModel) -> dict:
    doc = {
        "format_version": 1,
        "kind": model.kind,
        "task": model.task,
        "n_features": model.n_features,
        "output_dim": model.output_dim,
        "base": model.base.tolist(),
        "eta": model.eta,
        "tag": model.tag,
        "weights": model.weights.tolist(),
        "targets": model.targets.tolist(),
        "trees": [tree_to_dict(t) for t in model.trees],
    }
    if model.kind == "deep_forest":
        doc["layers"] = [[model_to_dict(f) for f in layer] for layer in model.layers]
        doc["best_layer"] = model.best_layer
        doc["layer_scores"] = list(model.layer_scores)
    if model.train_loss:
        doc["train_loss"] = list(model.train_loss)
    return doc


def model_from_dict(doc: dict) -> TreeModel:
    layers = [[model_from_dict(f) for f in layer] for layer in doc.get("layers", [])]
    return TreeModel(
        doc["kind"], [tree_from_dict(t) for t in doc["trees"]], doc["weights"], doc["base"],
        doc["n_features"], doc["output_dim"], doc["task"], targets=doc["targets"],
        eta=doc.get("eta", 1.0), tag=doc.get("tag", ""), layers=layers,
        best_layer=doc.get("best_layer", 0), layer_scores=doc.get("layer_scores", []),
        train_loss=doc.get("train_loss", []),
    )


def save_model(model: TreeModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> TreeModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
