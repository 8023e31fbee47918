"""Layer-stack encodings of tree predictors.

An exact stack reproduces a tree, forest, boosted ensemble or deep forest with
sign and identity activations. :func:`relax` turns it into a plain tanh network
by folding the approximation strengths into the affine maps:
``sign(z) ~ tanh(a z)`` and ``z ~ c tanh(z / c)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .trees import Tree, TreeModel, predict_model

SIGN, IDENTITY, TANH = "sign", "identity", "tanh"

# neuron roles: which part of a tree translation a neuron implements
SPLIT, LEAF, OUTPUT, PASSTHROUGH, INDICATOR, READOUT, FREE = (
    "split", "leaf", "output", "passthrough", "indicator", "readout", "free")


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    act: np.ndarray
    role: np.ndarray
    block: np.ndarray

    @property
    def width(self) -> int:
        return self.W.shape[0]

    @classmethod
    def make(cls, W, b, act, role, block=None):
        n = W.shape[0]
        act = np.full(n, act, dtype=object) if isinstance(act, str) else np.asarray(act, dtype=object)
        role = np.full(n, role, dtype=object) if isinstance(role, str) else np.asarray(role, dtype=object)
        block = np.full(n, -1, dtype=np.int64) if block is None else np.asarray(block, dtype=np.int64)
        return cls(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64), act, role, block)

    def copy(self) -> "Layer":
        return Layer(self.W.copy(), self.b.copy(), self.act.copy(), self.role.copy(), self.block.copy())


@dataclass
class LayerStack:
    layers: list[Layer]
    input_dim: int
    # leaf-value readout kept aside so the cancellation-free readout can be
    # rebuilt without re-deriving it from the halved layer-3 weights
    leaf_readout: np.ndarray | None = None
    offset: np.ndarray | None = None
    relaxed: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].width if self.layers else self.input_dim

    @property
    def widths(self) -> list[int]:
        return [layer.width for layer in self.layers]

    def __post_init__(self):
        fan_in = self.input_dim
        for k, layer in enumerate(self.layers):
            if layer.W.shape[1] != fan_in:
                raise ValueError(f"layer {k} expects {layer.W.shape[1]} inputs, previous width is {fan_in}")
            fan_in = layer.width


class Strengths(NamedTuple):
    s01: float = 1e10
    s12: float = 1e10
    s23: float = 1e10
    s_id: float = 1e10

    def check(self):
        for name, v in self._asdict().items():
            if not v > 0:
                raise ValueError(f"strength {name} must be positive, got {v}")
        return self


class Fidelity(NamedTuple):
    mean: float
    max: float


# ------------------------------------------------------------------ helpers


def _apply_act(z, act):
    acts = set(act.tolist())
    if acts == {TANH}:
        return np.tanh(z)
    if acts == {IDENTITY}:
        return z
    out = z.copy()
    sign = act == SIGN
    if sign.any():
        out[:, sign] = np.where(z[:, sign] <= 0, -1.0, 1.0).astype(z.dtype)
    tanh = act == TANH
    if tanh.any():
        out[:, tanh] = np.tanh(z[:, tanh])
    return out


def stack_forward(stack: LayerStack, X, dtype=np.float64, return_hidden: bool = False):
    """Evaluate ``stack`` on the rows of ``X`` in the given float precision."""
    h = np.atleast_2d(np.asarray(X, dtype=dtype))
    if h.shape[1] != stack.input_dim:
        raise ValueError(f"expected {stack.input_dim} inputs, got {h.shape[1]}")
    hidden = []
    for layer in stack.layers:
        z = h @ layer.W.T.astype(dtype) + layer.b.astype(dtype)
        h = _apply_act(z, layer.act)
        hidden.append(h)
    return (h, hidden) if return_hidden else h


# -------------------------------------------------------- exact translation


def _tree_blocks(trees, in_cols, n_in):
    """Layers 1 and 2 for a set of trees, block-diagonal over trees.

    ``in_cols`` maps a tree feature index to an input column. Single-leaf trees
    contribute no neurons.
    """
    n1 = sum(t.n_inner for t in trees)
    n2 = sum(t.n_leaves for t in trees if t.n_inner > 0)
    W1, b1, blk1 = np.zeros((n1, n_in)), np.zeros(n1), np.full(n1, -1)
    W2, b2, blk2 = np.zeros((n2, n1)), np.zeros(n2), np.full(n2, -1)
    leaf_rows = []
    r1 = r2 = 0
    for t_idx, tree in enumerate(trees):
        if tree.n_inner == 0:
            leaf_rows.append(None)
            continue
        for m in range(tree.n_inner):
            W1[r1 + m, in_cols[tree.feature[m]]] = 1.0
            b1[r1 + m] = -tree.threshold[m]
        blk1[r1:r1 + tree.n_inner] = t_idx
        for ell, (neg, pos) in enumerate(tree.leaf_paths()):
            W2[r2 + ell, [r1 + m for m in pos]] = 1.0
            W2[r2 + ell, [r1 + m for m in neg]] = -1.0
            b2[r2 + ell] = -(len(pos) + len(neg)) + 0.5
        blk2[r2:r2 + tree.n_leaves] = t_idx
        leaf_rows.append(np.arange(r2, r2 + tree.n_leaves))
        r1 += tree.n_inner
        r2 += tree.n_leaves
    return (W1, b1, blk1), (W2, b2, blk2), leaf_rows


def _readout(trees, weights, targets, leaf_rows, n2, out_dim, row_offset=0):
    """Leaf-value matrix A (outputs x leaf neurons) and constant part c such
    that the ensemble output is ``A @ onehot(leaves) + c``."""
    A = np.zeros((out_dim, n2))
    const = np.zeros(out_dim)
    for tree, w, c, rows in zip(trees, weights, targets, leaf_rows):
        vals = w * tree.values  # (leaves, tree outputs)
        if c >= 0:
            # per-class boosting tree: its scalar leaves feed output c only
            if rows is None:
                const[c] += vals[0, 0]
            else:
                A[c, rows] += vals[:, 0]
        elif rows is None:
            const += vals[0]
        else:
            A[:, rows] += vals.T
    return A, const


def _ensemble_stack(trees, weights, targets, base, n_in, out_dim, in_cols=None):
    in_cols = np.arange(n_in) if in_cols is None else in_cols
    (W1, b1, blk1), (W2, b2, blk2), leaf_rows = _tree_blocks(trees, in_cols, n_in)
    A, const = _readout(trees, weights, targets, leaf_rows, W2.shape[0], out_dim)
    offset = const + base
    # A3: (sum_l x_l a_l + sum_l a_l) / 2 with x_l in {-1, +1}
    W3 = A / 2.0
    b3 = W3.sum(axis=1) + offset
    layers = [
        Layer.make(W1, b1, SIGN, SPLIT, blk1),
        Layer.make(W2, b2, SIGN, LEAF, blk2),
        Layer.make(W3, b3, IDENTITY, OUTPUT),
    ]
    return LayerStack(layers, n_in, leaf_readout=A, offset=offset)


def translate_tree_exact(tree: Tree) -> LayerStack:
    """Three-layer sign/sign/identity network reproducing ``tree``."""
    return _ensemble_stack([tree], np.ones(1), np.full(1, -1), np.zeros(tree.output_dim),
                           tree.n_features, tree.output_dim)


def translate_ensemble_exact(model: TreeModel) -> LayerStack:
    """Concatenate per-tree translations; the third layer carries the tree
    weights (1/M for forests, the shrinkage for boosting) and the offset."""
    if model.kind not in ("single", "forest", "gbdt"):
        raise ValueError(f"cannot translate a {model.kind!r} model as a flat ensemble")
    dims = {t.n_features for t in model.trees}
    if len(dims) > 1 or (dims and dims.pop() != model.n_features):
        raise ValueError("trees of the ensemble disagree on the input dimension")
    return _ensemble_stack(model.trees, model.weights, model.targets, model.base,
                           model.n_features, model.output_dim)


def translate_deep_forest_exact(model: TreeModel) -> LayerStack:
    """Cascade of ensemble translations, one group of three layers per retained
    forest layer. All groups but the last carry ``d`` identity neurons that
    replay the raw input; the third layer of such a group emits
    ``[raw input, forest outputs]``, matching the cascade's feature order."""
    if model.kind != "deep_forest":
        raise ValueError("translate_deep_forest_exact needs a deep_forest model")
    d, C = model.n_features, model.output_dim
    groups = model.retained_layers
    layers: list[Layer] = []
    n_in = d
    block_base = 0
    for g, forests in enumerate(groups):
        last = g == len(groups) - 1
        trees, weights, targets, owner = [], [], [], []
        for k, forest in enumerate(forests):
            share = 1.0 / len(forests) if last else 1.0
            out_shift = 0 if last else d + k * C
            for tree, w, c in zip(forest.trees, forest.weights, forest.targets):
                trees.append(tree)
                weights.append(w * share)
                targets.append(c)
                owner.append(out_shift)
        (W1, b1, blk1), (W2, b2, blk2), leaf_rows = _tree_blocks(trees, np.arange(n_in), n_in)
        blk1 = np.where(blk1 >= 0, blk1 + block_base, -1)
        blk2 = np.where(blk2 >= 0, blk2 + block_base, -1)
        block_base += len(trees)
        n1, n2 = W1.shape[0], W2.shape[0]
        if last:
            A, const = _readout(trees, weights, targets, leaf_rows, n2, C)
            W3 = A / 2.0
            b3 = W3.sum(axis=1) + const
            layers += [
                Layer.make(W1, b1, SIGN, SPLIT, blk1),
                Layer.make(W2, b2, SIGN, LEAF, blk2),
                Layer.make(W3, b3, IDENTITY, OUTPUT),
            ]
            break
        n_out = d + len(forests) * C
        A = np.zeros((n_out, n2))
        const = np.zeros(n_out)
        for k, forest in enumerate(forests):
            sel = [i for i, o in enumerate(owner) if o == d + k * C]
            Ak, ck = _readout([trees[i] for i in sel], [weights[i] for i in sel],
                              [targets[i] for i in sel], [leaf_rows[i] for i in sel], n2, C)
            A[d + k * C:d + (k + 1) * C] = Ak
            const[d + k * C:d + (k + 1) * C] = ck
        # raw input: first d columns of this group's input
        P1 = np.zeros((d, n_in))
        P1[:, :d] = np.eye(d)
        W1p = np.vstack([W1, P1])
        b1p = np.concatenate([b1, np.zeros(d)])
        W2p = np.zeros((n2 + d, n1 + d))
        W2p[:n2, :n1] = W2
        W2p[n2:, n1:] = np.eye(d)
        b2p = np.concatenate([b2, np.zeros(d)])
        W3 = np.zeros((n_out, n2 + d))
        W3[:, :n2] = A / 2.0
        W3[:d, n2:] = np.eye(d)
        b3 = W3[:, :n2].sum(axis=1) + const
        act12 = lambda n: np.array([SIGN] * n + [IDENTITY] * d, dtype=object)
        role12 = lambda n, r: np.array([r] * n + [PASSTHROUGH] * d, dtype=object)
        layers += [
            Layer.make(W1p, b1p, act12(n1), role12(n1, SPLIT), np.concatenate([blk1, np.full(d, -1)])),
            Layer.make(W2p, b2p, act12(n2), role12(n2, LEAF), np.concatenate([blk2, np.full(d, -1)])),
            Layer.make(W3, b3, IDENTITY,
                       np.array([PASSTHROUGH] * d + [OUTPUT] * (n_out - d), dtype=object)),
        ]
        n_in = n_out
    return LayerStack(layers, d, meta={"groups": len(groups)})


def translate_exact(model: TreeModel) -> LayerStack:
    if model.kind == "deep_forest":
        return translate_deep_forest_exact(model)
    return translate_ensemble_exact(model)


# ------------------------------------------------------------------ relax


def relax(stack: LayerStack, s: Strengths = Strengths()) -> LayerStack:
    """Replace every activation by tanh, folding strengths into (W, b).

    Split and leaf neurons get their inputs multiplied by ``s01`` and ``s12``;
    identity neurons (tree outputs, raw passthrough) become
    ``c * tanh(z / c)`` with ``c = s23`` or ``s_id``, the factor ``c`` being
    moved into the next layer's columns. A diagonal affine readout restores
    the scale of the final outputs.
    """
    s = Strengths(*s).check()
    if stack.relaxed:
        raise ValueError("stack is already relaxed")
    row_of = {SPLIT: s.s01, LEAF: s.s12, OUTPUT: 1.0 / s.s23, PASSTHROUGH: 1.0 / s.s_id}
    col_of = {OUTPUT: s.s23, PASSTHROUGH: s.s_id}
    layers = []
    prev_cols = np.ones(stack.input_dim)
    for layer in stack.layers:
        if any(r not in row_of for r in layer.role):
            raise ValueError("relax only accepts stacks from the exact translators")
        rows = np.array([row_of[r] for r in layer.role])
        W = rows[:, None] * layer.W * prev_cols[None, :]
        b = rows * layer.b
        layers.append(Layer.make(W, b, TANH, layer.role.copy(), layer.block.copy()))
        prev_cols = np.array([col_of.get(r, 1.0) for r in layer.role])
    n = len(prev_cols)
    layers.append(Layer.make(np.diag(prev_cols), np.zeros(n), IDENTITY, READOUT))
    meta = dict(stack.meta, strengths=s._asdict())
    return LayerStack(layers, stack.input_dim, stack.leaf_readout, stack.offset, True, meta)


# ------------------------------------------------------------ fidelity


def fidelity(model: TreeModel, stack: LayerStack, X, dtype=np.float64) -> Fidelity:
    """Mean and max absolute difference between the model and its stack."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("fidelity needs at least one input")
    ref = predict_model(model, X).reshape(len(X), -1)
    got = stack_forward(stack, X, dtype).astype(np.float64).reshape(len(X), -1)
    if ref.shape != got.shape:
        raise ValueError(f"model outputs {ref.shape[1]} values, stack {got.shape[1]}")
    err = np.abs(ref - got)
    return Fidelity(float(err.mean()), float(err.max()))


def cancellation_compensated_readout(stack: LayerStack) -> LayerStack:
    """Insert a layer mapping the leaf indicators from {-1, 1} to {0, 1} so the
    readout multiplies each indicator by its leaf value directly."""
    if stack.relaxed or stack.leaf_readout is None or len(stack.layers) != 3:
        raise ValueError("compensated readout needs an exact tree or ensemble translation")
    L1, L2, _ = stack.layers
    n2 = L2.width
    ind = Layer.make(0.5 * np.eye(n2), np.full(n2, 0.5), IDENTITY, INDICATOR, L2.block)
    out = Layer.make(stack.leaf_readout.copy(), stack.offset.copy(), IDENTITY, OUTPUT)
    return LayerStack([L1.copy(), L2.copy(), ind, out], stack.input_dim,
                      stack.leaf_readout, stack.offset, False, dict(stack.meta, compensated=True))


# --------------------------------------------------------- serialization


def _activation_doc(layer: Layer):
    tags = layer.act.tolist()
    if len(set(tags)) == 1:
        return {"tag": tags[0], "param": None}
    return [{"tag": t, "param": None} for t in tags]


def stack_to_dict(stack: LayerStack) -> dict:
    doc = {
        "format_version": 1,
        "input_dim": stack.input_dim,
        "relaxed": stack.relaxed,
        "layers": [
            {
                "rows": layer.W.shape[0],
                "cols": layer.W.shape[1],
                "weights": layer.W.ravel().tolist(),
                "bias": layer.b.tolist(),
                "activation": _activation_doc(layer),
                "roles": layer.role.tolist(),
                "blocks": layer.block.tolist(),
            }
            for layer in stack.layers
        ],
        "meta": stack.meta,
    }
    if stack.leaf_readout is not None:
        doc["leaf_readout"] = {"rows": stack.leaf_readout.shape[0], "cols": stack.leaf_readout.shape[1],
                               "weights": stack.leaf_readout.ravel().tolist(),
                               "offset": stack.offset.tolist()}
    return doc


def stack_from_dict(doc: dict) -> LayerStack:
    layers = []
    for ld in doc["layers"]:
        W = np.array(ld["weights"], dtype=np.float64).reshape(ld["rows"], ld["cols"])
        act = ld["activation"]
        tags = act["tag"] if isinstance(act, dict) else [a["tag"] for a in act]
        roles = ld.get("roles", FREE)
        layers.append(Layer.make(W, ld["bias"], tags, roles, ld.get("blocks")))
    lr = doc.get("leaf_readout")
    A = off = None
    if lr is not None:
        A = np.array(lr["weights"], dtype=np.float64).reshape(lr["rows"], lr["cols"])
        off = np.array(lr["offset"], dtype=np.float64)
    return LayerStack(layers, doc["input_dim"], A, off, doc.get("relaxed", False), doc.get("meta", {}))


def save_stack(stack: LayerStack, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stack_to_dict(stack), fh)


def load_stack(path) -> LayerStack:
    with open(path, encoding="utf-8") as fh:
        return stack_from_dict(json.load(fh))
