"""Dense tanh networks: initialization (uniform or from tree translations),
backpropagation, Adam and an early-stopping training loop."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, holdout_split
from .errors import ConfigError, NumericError
from .metrics import UndefinedMetricError, task_metric
from .translate import IDENTITY, TANH, Layer, LayerStack, Strengths, relax, translate_exact
from .trees import TreeFitConfig, TreeModel, fit_deep_forest, fit_gbdt, fit_random_forest

INIT_MODES = ("random", "rf", "gbdt", "df")


@dataclass
class Mlp:
    """Affine layers with tanh between them and an identity output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def astype(self, dtype) -> "Mlp":
        return Mlp([W.astype(dtype) for W in self.weights], [b.astype(dtype) for b in self.biases])

    def copy(self) -> "Mlp":
        return self.astype(self.dtype)

    def __call__(self, X) -> np.ndarray:
        return forward(self, X)[0]


@dataclass
class InitSpec:
    mode: str = "random"
    width: int = 64
    depth: int = 3
    strengths: Strengths = Strengths(100.0, 1.0, 1.0, 1.0)
    tree: TreeFitConfig = field(default_factory=TreeFitConfig)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in INIT_MODES:
            raise ConfigError(f"unknown init mode {self.mode!r}")
        if self.depth < 1 or self.width < 1:
            raise ConfigError("depth and width must be positive")
        self.strengths = Strengths(*self.strengths)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str | None = None
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.loss not in (None, "mse", "cross_entropy"):
            raise ConfigError(f"unknown loss {self.loss!r}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = 0
    status: str = "ok"

    @property
    def best_val_loss(self) -> float:
        if not self.val_loss:
            return self.initial_val_loss
        return self.val_loss[self.best_epoch - 1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_metric", "seconds"])
            for e, row in enumerate(zip(self.train_loss, self.val_loss, self.val_metric, self.seconds), 1):
                w.writerow([e] + [repr(float(v)) for v in row])


# ---------------------------------------------------------- initializers


def mlp_dims(d_in: int, width: int, depth: int, d_out: int) -> list[int]:
    """``depth`` affine layers: d_in -> width -> ... -> width -> d_out."""
    return [d_in] + [width] * (depth - 1) + [d_out]


def init_random(dims, seed: int = 0, dtype=np.float64) -> Mlp:
    """Every parameter of layer j uniform on [-1/sqrt(d_j), 1/sqrt(d_j)] with
    d_j the layer's fan-in."""
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(d_in)
        Ws.append(rng.uniform(-bound, bound, size=(d_out, d_in)).astype(dtype))
        bs.append(rng.uniform(-bound, bound, size=d_out).astype(dtype))
    return Mlp(Ws, bs)


def fit_initializer(ds: Dataset, init: InitSpec, train_rows=None, val_rows=None) -> TreeModel:
    rows = np.arange(ds.n) if train_rows is None else np.asarray(train_rows)
    cfg = init.tree
    if init.mode == "rf":
        return fit_random_forest(ds, rows, cfg)
    if init.mode == "gbdt":
        return fit_gbdt(ds, rows, cfg)
    if init.mode == "df":
        if val_rows is None or len(val_rows) == 0:
            y = None if ds.task == "regression" else ds.y
            rows, val_rows = holdout_split(rows, 0.2, init.seed, y)
        return fit_deep_forest(ds, rows, cfg, val_rows)
    raise ConfigError(f"init mode {init.mode!r} does not use trees")


def copied_layers(model: TreeModel, strengths: Strengths) -> list[Layer]:
    """Relaxed translation layers reused by the initializer: the first two for
    forests and boosting, the first ``3 l - 1`` for an l-layer deep forest."""
    stack = relax(translate_exact(model), strengths)
    if model.kind == "deep_forest":
        n = 3 * (model.best_layer + 1) - 1
    else:
        n = 2
    return stack.layers[:n]


def init_from_trees(ds: Dataset, init: InitSpec, train_rows=None, val_rows=None,
                    model: TreeModel | None = None):
    """Fit the tree model on the training rows, translate and relax it, and
    copy its leading layers into a fresh randomly initialized MLP.

    Returns ``(mlp, model, copied)`` where ``copied`` lists the (rows, cols)
    extent of every copied block.
    """
    if init.mode == "random":
        raise ConfigError("init_from_trees needs a tree-based mode")
    if model is None:
        model = fit_initializer(ds, init, train_rows, val_rows)
    layers = copied_layers(model, init.strengths)
    min_depth = len(layers) + 1
    if init.depth < min_depth:
        raise ConfigError(f"MLP depth {init.depth} too small for {len(layers)} translated layers "
                          f"(need >= {min_depth})")
    dims = mlp_dims(ds.d, init.width, init.depth, ds.output_dim)
    mlp = init_random(dims, init.seed)
    copied = []
    for k, layer in enumerate(layers):
        rows, cols = layer.W.shape
        if rows > dims[k + 1]:
            raise ConfigError(f"layer {k + 1}: translated width {rows} exceeds MLP width {dims[k + 1]}")
        mlp.weights[k][:rows, :cols] = layer.W
        mlp.biases[k][:rows] = layer.b
        copied.append((rows, cols))
    return mlp, model, copied


def initialize(ds: Dataset, init: InitSpec, train_rows=None, val_rows=None):
    """Build the MLP for any init mode; returns ``(mlp, model_or_None)``."""
    if init.mode == "random":
        return init_random(mlp_dims(ds.d, init.width, init.depth, ds.output_dim), init.seed), None
    mlp, model, _ = init_from_trees(ds, init, train_rows, val_rows)
    return mlp, model


# ------------------------------------------------------ forward / backward


def forward(mlp: Mlp, X):
    """Returns ``(outputs, activations)`` with ``activations[0]`` the input and
    ``activations[j]`` the output of hidden layer j."""
    h = np.asarray(X, dtype=mlp.dtype)
    if h.ndim == 1:
        h = h[None, :]
    acts = [h]
    last = mlp.depth - 1
    for j, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ W.T + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite values in layer {j + 1}")
        h = z if j == last else np.tanh(z)
        if j != last:
            acts.append(h)
    return h, acts


def _loss_and_dout(out, y, loss):
    B = out.shape[0]
    if loss == "mse":
        target = np.asarray(y, dtype=out.dtype).reshape(B, -1)
        diff = out - target
        return float(np.mean(diff.astype(np.float64) ** 2)), (2.0 / diff.size) * diff
    y = np.asarray(y)
    if y.min() < 0 or y.max() >= out.shape[1]:
        raise ValueError(f"class index out of range for {out.shape[1]} outputs")
    z = out - out.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    value = float(-np.mean(logp[np.arange(B), y].astype(np.float64)))
    d = np.exp(logp)
    d[np.arange(B), y] -= 1.0
    return value, d / B


def loss_value(mlp: Mlp, X, y, loss: str) -> float:
    out, _ = forward(mlp, X)
    return _loss_and_dout(out, y, loss)[0]


def loss_and_grad(mlp: Mlp, X, y, loss: str):
    """Mean loss over the batch and its gradient as ``[(dW, db), ...]``.

    ``loss`` is ``"mse"`` or ``"cross_entropy"`` (softmax over the outputs,
    integer class targets).
    """
    out, acts = forward(mlp, X)
    value, delta = _loss_and_dout(out, y, loss)
    grads = [None] * mlp.depth
    for j in range(mlp.depth - 1, -1, -1):
        h_prev = acts[j]
        grads[j] = (delta.T @ h_prev, delta.sum(axis=0))
        if j > 0:
            delta = (delta @ mlp.weights[j]) * (1.0 - h_prev * h_prev)
    return value, grads


# ------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, mlp: Mlp) -> "AdamState":
        return cls([np.zeros_like(p) for p in mlp.params()], [np.zeros_like(p) for p in mlp.params()])


def adam_step(mlp: Mlp, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update with bias-corrected moments."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    flat = [g for pair in grads for g in pair]
    for p, g, m, v in zip(mlp.params(), flat, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# --------------------------------------------------------------- training


def default_loss(task: str) -> str:
    return "mse" if task == "regression" else "cross_entropy"


def best_epoch(val_losses) -> int:
    """1-based index of the first minimal validation loss (0 if none)."""
    if len(val_losses) == 0:
        return 0
    return int(np.argmin(np.asarray(val_losses, dtype=np.float64))) + 1


def _metric(task, out, y):
    try:
        return task_metric(task, out, y)
    except UndefinedMetricError:
        return float("nan")


def train(mlp: Mlp, train_set: Dataset, val_set: Dataset, cfg: TrainConfig | None = None,
          callback=None):
    """Mini-batch Adam with per-epoch validation.

    Returns the parameters of the epoch with the lowest validation loss and the
    full history. A non-finite loss stops training; the history then ends at
    the last finite epoch and ``status`` is ``"diverged"``.
    """
    cfg = cfg or TrainConfig()
    loss = cfg.loss or default_loss(train_set.task)
    dtype = np.dtype(cfg.dtype)
    net = mlp.astype(dtype)
    Xt = train_set.X.astype(dtype)
    yt = train_set.y if loss == "cross_entropy" else train_set.y.astype(dtype)
    Xv = val_set.X.astype(dtype)
    hist = TrainHistory()
    out_v, _ = forward(net, Xv)
    hist.initial_val_loss = _loss_and_dout(out_v, val_set.y, loss)[0]
    best = net.copy()
    best_loss = math.inf
    state = AdamState.zeros_like(net)
    n = len(Xt)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(n)
        total = 0.0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                value, grads = loss_and_grad(net, Xt[idx], yt[idx], loss)
                if not math.isfinite(value):
                    raise NumericError(f"non-finite training loss at epoch {epoch}")
                total += value * len(idx)
                adam_step(net, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
            out_v, _ = forward(net, Xv)
            v_loss = _loss_and_dout(out_v, val_set.y, loss)[0]
            if not math.isfinite(v_loss):
                raise NumericError(f"non-finite validation loss at epoch {epoch}")
        except NumericError:
            hist.status = "diverged"
            break
        hist.train_loss.append(total / n)
        hist.val_loss.append(v_loss)
        hist.val_metric.append(_metric(val_set.task, out_v, val_set.y))
        hist.seconds.append(time.perf_counter() - t0)
        if v_loss < best_loss:
            best_loss = v_loss
            best = net.copy()
        if callback is not None:
            callback(epoch, net, hist)
    hist.best_epoch = best_epoch(hist.val_loss)
    return best, hist


# ---------------------------------------------------------- conversions


def mlp_to_stack(mlp: Mlp) -> LayerStack:
    layers = []
    for j, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        act = IDENTITY if j == mlp.depth - 1 else TANH
        layers.append(Layer.make(W.astype(np.float64), b.astype(np.float64), act, "free"))
    return LayerStack(layers, mlp.dims[0], relaxed=True)


def stack_to_mlp(stack: LayerStack, dtype=np.float64) -> Mlp:
    """Load a tanh stack with an identity readout (e.g. a relaxed translation)."""
    last = len(stack.layers) - 1
    for j, layer in enumerate(stack.layers):
        want = IDENTITY if j == last else TANH
        if set(layer.act.tolist()) != {want}:
            raise ValueError(f"layer {j + 1} is not a plain {want} layer")
    return Mlp([l.W.astype(dtype) for l in stack.layers], [l.b.astype(dtype) for l in stack.layers])


def save_checkpoint(path, mlp: Mlp, state: AdamState | None = None, epoch: int = 0) -> None:
    from .translate import stack_to_dict

    doc = stack_to_dict(mlp_to_stack(mlp))
    doc["epoch"] = epoch
    if state is not None:
        doc["optimizer"] = {"t": state.t, "m": [a.ravel().tolist() for a in state.m],
                            "v": [a.ravel().tolist() for a in state.v]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[Mlp, AdamState | None, int]:
    from .translate import stack_from_dict

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    mlp = stack_to_mlp(stack_from_dict(doc))
    state = None
    opt = doc.get("optimizer")
    if opt is not None:
        shapes = [p.shape for p in mlp.params()]
        state = AdamState([np.array(a).reshape(s) for a, s in zip(opt["m"], shapes)],
                          [np.array(a).reshape(s) for a, s in zip(opt["v"], shapes)], opt["t"])
    return mlp, state, doc.get("epoch", 0)
