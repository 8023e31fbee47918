"""Experiment harness: search spaces, random search, cross-validation,
weight-sparsity statistics and the two tuning protocols.

Protocol P1 compares initializers under identical MLP settings: the MLP
dimensions and learning rate are tuned for random initialization, then frozen
while each tree-based initializer tunes only its own knobs. Protocol P2 gives
every method the same budget but lets each tune everything it owns.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import Dataset, FoldPlan, holdout_split, label_encode, make_folds, normalize_apply, normalize_fit
from .errors import ConfigError
from .metrics import HIGHER_IS_BETTER, METRIC_FOR_TASK, UndefinedMetricError, task_metric
from .net import InitSpec, Mlp, TrainConfig, TrainHistory, initialize, train
from .translate import Strengths
from .trees import TreeFitConfig, _parallel_map, fit_model, predict_model

TREE_INITS = ("rf", "gbdt", "df")
VAL_FRACTION = 0.2


@dataclass(frozen=True)
class Metric:
    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in HIGHER_IS_BETTER:
            raise ValueError(f"unknown metric {self.kind!r}")
        if self.kind == "mse" and not self.value >= 0:
            raise ValueError("mse must be >= 0")
        if self.kind != "mse" and not 0.0 <= self.value <= 1.0:
            raise ValueError(f"{self.kind} must lie in [0, 1]")


# ------------------------------------------------------------ search space


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"empty range [{self.lo}, {self.hi}]")

    def sample(self, rng):
        return float(rng.uniform(self.lo, self.hi))


@dataclass(frozen=True)
class LogUniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ConfigError(f"log range needs 0 < lo < hi, got [{self.lo}, {self.hi}]")

    def sample(self, rng):
        return float(math.exp(rng.uniform(math.log(self.lo), math.log(self.hi))))


@dataclass(frozen=True)
class IntRange:
    """Integers lo..hi inclusive; ``log`` samples on a log scale."""

    lo: int
    hi: int
    log: bool = False

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ConfigError(f"empty integer range {self.lo}..{self.hi}")
        if self.log and self.lo < 1:
            raise ConfigError("log integer range needs lo >= 1")

    def sample(self, rng):
        if self.lo == self.hi:
            return int(self.lo)
        if self.log:
            v = math.exp(rng.uniform(math.log(self.lo), math.log(self.hi + 1)))
            return int(min(self.hi, math.floor(v)))
        return int(rng.integers(self.lo, self.hi + 1))


@dataclass(frozen=True)
class Categorical:
    values: tuple

    def __post_init__(self):
        if len(self.values) == 0:
            raise ConfigError("categorical dimension without values")

    def sample(self, rng):
        return self.values[int(rng.integers(len(self.values)))]


@dataclass
class SearchSpace:
    dims: dict = field(default_factory=dict)

    def sample(self, rng) -> dict:
        # fixed key order keeps the draw sequence independent of dict history
        return {k: self.dims[k].sample(rng) for k in sorted(self.dims)}

    def describe(self) -> dict:
        return {k: {"type": type(v).__name__, **asdict(v)} for k, v in sorted(self.dims.items())}


@dataclass
class Trial:
    index: int
    config: dict
    value: float = math.nan
    status: str = "ok"
    error: str = ""


class SearchFailed(RuntimeError):
    """Every trial of a search failed."""


def random_search(space: SearchSpace, budget: int, objective, seed: int = 0):
    """Evaluate ``budget`` i.i.d. configurations and return ``(best, trials)``.

    ``objective(config)`` returns a loss (lower is better). Trials that raise
    or return a non-finite value are marked failed and never selected. Ties
    go to the earliest trial.
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    configs = [space.sample(rng) for _ in range(budget)]
    trials = []
    for i, cfg in enumerate(configs):
        t = Trial(i, cfg)
        try:
            t.value = float(objective(cfg))
            if not math.isfinite(t.value):
                t.status, t.error = "failed", "non-finite objective"
        except (ArithmeticError, ValueError, UndefinedMetricError) as exc:
            t.status, t.error = "failed", f"{type(exc).__name__}: {exc}"
        trials.append(t)
    ok = [t for t in trials if t.status == "ok"]
    if not ok:
        raise SearchFailed(f"all {budget} trials failed; first error: {trials[0].error}")
    best = min(ok, key=lambda t: (t.value, t.index))
    return dict(best.config), trials


# ---------------------------------------------------------------- sparsity


HIST_EDGES = np.logspace(-8, 2, 51)


def weight_histogram(w) -> np.ndarray:
    """101 counts: 50 negative log-spaced bins (most negative first), one
    exact-zero bin, 50 positive bins. Magnitudes outside [1e-8, 1e2] are
    clipped into the end bins."""
    w = np.asarray(w, dtype=np.float64).ravel()
    nb = len(HIST_EDGES) - 1
    mag = np.abs(w[w != 0])
    idx = np.clip(np.searchsorted(HIST_EDGES, mag, side="right") - 1, 0, nb - 1)
    pos = w[w != 0] > 0
    counts = np.zeros(2 * nb + 1, dtype=np.int64)
    np.add.at(counts, nb + 1 + idx[pos], 1)
    np.add.at(counts, nb - 1 - idx[~pos], 1)
    counts[nb] = int(np.sum(w == 0))
    return counts


def sparsity_stats(mlp: Mlp, eps: float = 1e-3) -> dict:
    """Per layer: fraction of weights (biases excluded) with |w| < eps and a
    fixed-bin histogram."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    layers = []
    for W in mlp.weights:
        layers.append({"shape": list(W.shape),
                       "fraction_below": float(np.mean(np.abs(W) < eps)),
                       "histogram": weight_histogram(W).tolist()})
    return {"eps": eps, "bin_edges": HIST_EDGES.tolist(), "layers": layers}


def kept_sparse(w0, w1, below: float = 1e-3, stay: float = 1e-2) -> float:
    """Fraction of the entries with |w0| < below that still satisfy
    |w1| < stay (nan when there are none)."""
    mask = np.abs(np.asarray(w0)) < below
    if not mask.any():
        return math.nan
    return float(np.mean(np.abs(np.asarray(w1)[mask]) < stay))


# ------------------------------------------------------------ method specs


@dataclass
class MethodSpec:
    """A trainable method: an MLP with some initializer, or a bare tree model
    (``model`` in cart/rf/crf/gbdt/df)."""

    name: str
    model: str = "mlp"
    init: InitSpec = field(default_factory=InitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    tree: TreeFitConfig = field(default_factory=TreeFitConfig)

    def describe(self) -> dict:
        if self.model != "mlp":
            return {"model": self.model, "tree": asdict(self.tree)}
        init = asdict(self.init)
        init["strengths"] = list(self.init.strengths)
        return {"model": "mlp", "init": init, "train": asdict(self.train)}


@dataclass
class FoldResult:
    repeat: int
    fold: int
    seed: int
    value: float
    val_loss: float
    best_epoch: int = 0
    status: str = "ok"
    history: TrainHistory | None = None
    sparsity: dict = field(default_factory=dict)
    sizes: tuple = (0, 0, 0)


def derived_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) & (2**63 - 1) for p in parts]).generate_state(1)[0])


def _class_labels(ds):
    return None if ds.task == "regression" else ds.y


def prepare_split(ds: Dataset, fit_rows) -> Dataset:
    """Encode categoricals and standardize with statistics from ``fit_rows``."""
    ds = label_encode(ds, fit_rows)
    return normalize_apply(ds, normalize_fit(ds, fit_rows))


def _tree_loss(model, ds, rows):
    """Lower-is-better validation score of a bare tree model."""
    out = predict_model(model, ds.X[rows])
    v = task_metric(ds.task, out, ds.y[rows])
    return v if ds.task == "regression" else -v


def evaluate_split(ds: Dataset, spec: MethodSpec, train_rows, test_rows, seed: int,
                   val_fraction: float = VAL_FRACTION, keep_history: bool = True) -> FoldResult:
    """Train ``spec`` on ``train_rows`` (minus a validation carve-out used for
    early stopping) and score it on ``test_rows``."""
    train_rows = np.asarray(train_rows)
    test_rows = np.asarray(test_rows)
    if np.intersect1d(train_rows, test_rows).size:
        raise AssertionError("training and evaluation rows overlap")
    fit_rows, val_rows = holdout_split(train_rows, val_fraction, seed, _class_labels(ds))
    dsn = prepare_split(ds, fit_rows)
    sizes = (len(fit_rows), len(val_rows), len(test_rows))
    if spec.model != "mlp":
        cfg = replace(spec.tree, seed=seed)
        model = fit_model(spec.model, dsn, fit_rows, cfg, val_rows)
        out = predict_model(model, dsn.X[test_rows])
        value = task_metric(ds.task, out, ds.y[test_rows])
        val_loss = _tree_loss(model, dsn, val_rows) if len(val_rows) else math.nan
        return FoldResult(0, 0, seed, value, val_loss, sizes=sizes)
    init = replace(spec.init, seed=seed, tree=replace(spec.init.tree, seed=seed))
    mlp, _ = initialize(dsn, init, fit_rows, val_rows)
    w0 = mlp.weights[0].copy()
    last = {}

    def grab(epoch, net, hist):
        last["mlp"] = net

    best, hist = train(mlp, dsn.subset(fit_rows), dsn.subset(val_rows),
                       replace(spec.train, seed=seed), grab)
    final = last["mlp"].copy() if "mlp" in last else mlp
    value = task_metric(ds.task, best(dsn.X[test_rows]), ds.y[test_rows])
    sparsity = {"epoch0": sparsity_stats(mlp), "last": sparsity_stats(final),
                "last_epoch": len(hist.val_loss),
                "layer1_kept": kept_sparse(w0, final.weights[0])}
    return FoldResult(0, 0, seed, value, hist.best_val_loss, hist.best_epoch, hist.status,
                      hist if keep_history else None, sparsity, sizes)


# -------------------------------------------------------------- reporting


def _std(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


@dataclass
class MethodResult:
    name: str
    config: dict
    folds: list[FoldResult] = field(default_factory=list)
    search: list[Trial] = field(default_factory=list)
    search_split: dict = field(default_factory=dict)

    @property
    def values(self) -> list[float]:
        return [f.value for f in self.folds if f.status == "ok" and math.isfinite(f.value)]

    @property
    def mean(self) -> float:
        v = self.values
        # fixed-order summation keeps reports bit-stable
        return math.fsum(v) / len(v) if v else math.nan

    @property
    def std(self) -> float:
        return _std(self.values)

    def to_dict(self) -> dict:
        folds = []
        for f in self.folds:
            folds.append({"repeat": f.repeat, "fold": f.fold, "seed": f.seed, "value": f.value,
                          "val_loss": f.val_loss, "best_epoch": f.best_epoch, "status": f.status,
                          "sizes": list(f.sizes), "sparsity": f.sparsity})
        return {"name": self.name, "config": self.config, "mean": self.mean, "std": self.std,
                "n_folds": len(self.values), "folds": folds,
                "search": [asdict(t) for t in self.search], "search_split": self.search_split}


@dataclass
class ExperimentReport:
    protocol: str
    task: str
    metric: str
    methods: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, result: MethodResult):
        self.methods[result.name] = result

    def curves(self) -> list[tuple]:
        """Tidy rows (method, repeat, fold, epoch, split, loss)."""
        rows = []
        for name, res in self.methods.items():
            for f in res.folds:
                if f.history is None:
                    continue
                rows.append((name, f.repeat, f.fold, 0, "val", f.history.initial_val_loss))
                for e, (lt, lv) in enumerate(zip(f.history.train_loss, f.history.val_loss), 1):
                    rows.append((name, f.repeat, f.fold, e, "train", lt))
                    rows.append((name, f.repeat, f.fold, e, "val", lv))
        return rows

    def stats(self) -> dict:
        return {"metric": self.metric,
                "methods": {k: {"mean": v.mean, "std": v.std, "n_folds": len(v.values)}
                            for k, v in self.methods.items()}}

    def to_dict(self) -> dict:
        return {"format_version": 1, "protocol": self.protocol, "task": self.task,
                "metric": self.metric, "meta": self.meta,
                "methods": {k: v.to_dict() for k, v in self.methods.items()},
                "summary": summary_rows(self)}

    def save(self, json_path, curves_path=None) -> None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, default=_json_default)
        if curves_path is not None:
            with open(curves_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["method", "repeat", "fold", "epoch", "split", "loss"])
                for r in self.curves():
                    w.writerow(list(r[:5]) + [repr(float(r[5]))])


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def summary_rows(report) -> list[dict]:
    """Mean, std and a bold flag per method. A method is bold when it matches
    the best mean up to its own standard deviation."""
    doc = report if isinstance(report, dict) else report.stats()
    higher = HIGHER_IS_BETTER[doc["metric"]]
    stats = [(k, m["mean"], m["std"], m["n_folds"]) for k, m in doc["methods"].items()]
    finite = [s[1] for s in stats if math.isfinite(s[1])]
    best = (max(finite) if higher else min(finite)) if finite else math.nan
    rows = []
    for name, mean, std, n in stats:
        bold = math.isfinite(mean) and (mean + std >= best if higher else mean - std <= best)
        rows.append({"method": name, "mean": mean, "std": std, "n_folds": n, "bold": bool(bold)})
    return rows


def summary_table(report) -> str:
    """Plain-text table; bold entries are wrapped in ``**``."""
    doc = report if isinstance(report, dict) else report.to_dict()
    lines = [f"metric: {doc['metric']} ({'higher' if HIGHER_IS_BETTER[doc['metric']] else 'lower'} is better)",
             f"{'method':<14} {'mean +- std':>24} {'folds':>6}"]
    for r in doc["summary"] if "summary" in doc else summary_rows(doc):
        cell = f"{r['mean']:.4f} +- {r['std']:.4f}"
        if r["bold"]:
            cell = f"**{cell}**"
        lines.append(f"{r['method']:<14} {cell:>24} {r['n_folds']:>6}")
    return "\n".join(lines)


# -------------------------------------------------------- cross-validation


def cross_validate(ds: Dataset, spec: MethodSpec, folds: FoldPlan | int = 5, repeats: int = 1,
                   seeds=None, max_folds: int | None = None, n_jobs: int | None = 1,
                   keep_history: bool = True) -> MethodResult:
    """Repeated k-fold evaluation of ``spec``.

    ``folds`` is either a fixed FoldPlan reused for every repeat or a fold
    count, in which case repeat r draws its own (stratified for
    classification) plan from ``seeds[r]``. ``max_folds`` truncates every
    repeat to its first folds.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    seeds = list(range(repeats)) if seeds is None else [int(s) for s in seeds]
    if len(seeds) != repeats:
        raise ValueError(f"{repeats} repeats but {len(seeds)} seeds")
    if isinstance(folds, FoldPlan) and len(folds.assignments) != ds.n:
        raise ValueError(f"fold plan covers {len(folds.assignments)} rows, dataset has {ds.n}")
    jobs = []
    for r, seed in enumerate(seeds):
        plan = folds if isinstance(folds, FoldPlan) else make_folds(ds, int(folds), True, seed)
        n_f = plan.k if max_folds is None else min(plan.k, max_folds)
        for f in range(n_f):
            jobs.append((r, f, seed, plan))

    def run(job):
        r, f, seed, plan = job
        tr, te = plan.train_rows(f), plan.test_rows(f)
        if np.intersect1d(tr, te).size:
            raise AssertionError(f"fold {f} trains on its evaluation rows")
        res = evaluate_split(ds, spec, tr, te, derived_seed(seed, f), keep_history=keep_history)
        res.repeat, res.fold = r, f
        return res

    result = MethodResult(spec.name, spec.describe())
    result.folds = _parallel_map(run, jobs, n_jobs)
    return result


# ---------------------------------------------------------------- protocols


def tree_groups(ds: Dataset, mode: str) -> int:
    """Trees per boosting round (one per class for multiclass GBDT)."""
    if mode == "gbdt" and ds.task == "multiclass":
        return ds.n_classes
    return 1


def n_estimators_for(width: int, max_depth: int, groups: int = 1, reserved: int = 0) -> int:
    """Largest tree count whose translated leaf layer fits ``width`` neurons."""
    return max(1, (width - reserved) // (groups * 2 ** max_depth))


def max_tree_depth(width: int, groups: int = 1, reserved: int = 0, cap: int = 11) -> int:
    room = max(1, (width - reserved) // groups)
    return max(1, min(cap, int(math.floor(math.log2(room)))))


def tree_space(ds: Dataset, mode: str, width: int) -> SearchSpace:
    groups = tree_groups(ds, mode)
    reserved = ds.d if mode == "df" else 0
    dims = {"max_depth": IntRange(1, max_tree_depth(width, groups, reserved))}
    if mode in ("rf", "df"):
        dims["max_features"] = Uniform(0.05, 1.0)
    if mode == "gbdt":
        dims["eta"] = LogUniform(0.01, 0.3)
        dims["reg_lambda"] = LogUniform(1e-8, 1.0)
    if mode == "df":
        dims["forest_depth"] = IntRange(1, 3)
    return SearchSpace(dims)


def strength_space(mode: str) -> SearchSpace:
    dims = {"strength01": LogUniform(1.0, 1e4), "strength12": LogUniform(0.01, 100.0)}
    if mode == "df":
        dims["strength23"] = LogUniform(0.01, 100.0)
        dims["strength_id"] = LogUniform(0.01, 100.0)
    return SearchSpace(dims)


def tree_config(ds: Dataset, mode: str, width: int, params: dict, seed: int = 0) -> TreeFitConfig:
    groups = tree_groups(ds, mode)
    reserved = ds.d if mode == "df" else 0
    depth = int(params["max_depth"])
    kw = {"max_depth": depth, "seed": seed,
          "n_estimators": n_estimators_for(width, depth, groups, reserved)}
    for k in ("max_features", "eta", "reg_lambda", "forest_depth"):
        if k in params:
            kw[k] = params[k]
    if mode == "df":
        kw["forests"] = ("rf",)
    return TreeFitConfig(**kw)


def strengths_of(params: dict) -> Strengths:
    return Strengths(params.get("strength01", 100.0), params.get("strength12", 1.0),
                     params.get("strength23", 1.0), params.get("strength_id", 1.0))


@dataclass
class TuningSplit:
    """Rows used for hyperparameter search: fit / validation inside the
    training side of a held-out test fold."""

    fit: np.ndarray
    val: np.ndarray
    data: Dataset


def tuning_split(ds: Dataset, seed: int, k: int = 5) -> TuningSplit:
    plan = make_folds(ds, k, True, seed)
    tr = plan.train_rows(0)
    fit, val = holdout_split(tr, VAL_FRACTION, seed, _class_labels(ds))
    return TuningSplit(fit, val, prepare_split(ds, fit))


def mlp_objective(split: TuningSplit, init: InitSpec, tcfg: TrainConfig):
    """Best validation loss of one training run on the tuning split."""
    dsn = split.data
    mlp, _ = initialize(dsn, init, split.fit, split.val)
    _, hist = train(mlp, dsn.subset(split.fit), dsn.subset(split.val), tcfg)
    if hist.status != "ok" and not hist.val_loss:
        raise ArithmeticError("training diverged in the first epoch")
    return hist.best_val_loss


def tree_objective(split: TuningSplit, mode: str, cfg: TreeFitConfig):
    model = fit_model(mode, split.data, split.fit, cfg, split.val)
    return _tree_loss(model, split.data, split.val)


@dataclass
class MlpSpace:
    """Search ranges for the purely MLP-side hyperparameters."""

    learning_rate: tuple = (1e-6, 1e-1)
    depth: tuple = (1, 10)
    width: tuple = (16, 2048)


def _validate_methods(methods):
    methods = list(methods)
    for m in methods:
        if m not in ("random",) + TREE_INITS:
            raise ConfigError(f"unknown method {m!r}; expected random, rf, gbdt or df")
    if not methods:
        raise ConfigError("no methods given")
    return methods


def run_protocol_p1(ds: Dataset, methods=("random", "rf", "gbdt"), width: int | None = 256,
                    budget: int = 20, seeds=(0,), epochs: int = 100, search_epochs: int | None = None,
                    k: int = 5, max_folds: int | None = None, mlp_space: MlpSpace | None = None,
                    batch_size: int = 256, search_seed: int = 0, log=None) -> ExperimentReport:
    """Phase 1 tunes (width, depth, learning rate) for random initialization;
    phase 2 freezes them and tunes only tree and strength settings for each
    tree-based initializer. ``width`` fixes the width when given.
    Final scores come from cross-validation over ``seeds``."""
    methods = _validate_methods(methods)
    mlp_space = mlp_space or MlpSpace()
    search_epochs = epochs if search_epochs is None else search_epochs
    split = tuning_split(ds, search_seed, k)
    say = log or (lambda msg: None)

    dims = {"learning_rate": LogUniform(*mlp_space.learning_rate)}
    lo_depth = mlp_space.depth[0]
    if any(m in TREE_INITS for m in methods):
        # tree initializers copy two layers and need a trainable layer after them
        lo_depth = max(lo_depth, 3)
    dims["depth"] = IntRange(lo_depth, max(lo_depth, mlp_space.depth[1]))
    if width is None:
        dims["width"] = IntRange(*mlp_space.width, log=True)

    def obj_random(p):
        w = width if width is not None else p["width"]
        init = InitSpec("random", w, p["depth"], seed=search_seed)
        tc = TrainConfig(search_epochs, batch_size, p["learning_rate"], seed=search_seed)
        return mlp_objective(split, init, tc)

    best1, trials1 = random_search(SearchSpace(dims), budget, obj_random, search_seed)
    shared = {"width": int(width if width is not None else best1["width"]),
              "depth": int(best1["depth"]), "learning_rate": float(best1["learning_rate"])}
    say(f"phase 1: {shared}")
    tcfg = TrainConfig(epochs, batch_size, shared["learning_rate"])

    report = ExperimentReport("p1", ds.task, METRIC_FOR_TASK[ds.task],
                              meta={"shared": shared, "budget": budget, "seeds": list(seeds),
                                    "epochs": epochs, "search_epochs": search_epochs,
                                    "k": k, "max_folds": max_folds, "search_seed": search_seed})
    for m in methods:
        if m == "random":
            spec = MethodSpec("random", init=InitSpec("random", shared["width"], shared["depth"]),
                              train=tcfg)
            trials = trials1
        else:
            space = SearchSpace({**tree_space(ds, m, shared["width"]).dims,
                                 **strength_space(m).dims})

            def obj(p, m=m):
                init = InitSpec(m, shared["width"], shared["depth"], strengths_of(p),
                                tree_config(ds, m, shared["width"], p, search_seed), search_seed)
                tc = TrainConfig(search_epochs, batch_size, shared["learning_rate"], seed=search_seed)
                return mlp_objective(split, init, tc)

            best2, trials = random_search(space, budget, obj, derived_seed(search_seed, 2, TREE_INITS.index(m)))
            say(f"phase 2 {m}: {best2}")
            spec = MethodSpec(m, init=InitSpec(m, shared["width"], shared["depth"], strengths_of(best2),
                                               tree_config(ds, m, shared["width"], best2)),
                              train=tcfg)
        res = cross_validate(ds, spec, k, len(seeds), seeds, max_folds)
        res.search = trials
        report.add(res)
        say(f"{m}: {res.mean:.4f} +- {res.std:.4f}")
    return report


def p2_split(budget: int) -> tuple[int, int]:
    """(tree trials, MLP trials) for tree-based methods: a quarter / three
    quarters of the budget."""
    if budget < 4 or budget % 4:
        raise ConfigError(f"budget {budget} does not split 25/75 into whole trials")
    return budget // 4, budget - budget // 4


def run_protocol_p2(ds: Dataset, methods=("random", "rf", "gbdt"), budget: int = 20, seeds=(0,),
                    width: int = 2048, epochs: int = 100, search_epochs: int | None = None,
                    k: int = 5, max_folds: int | None = None, mlp_space: MlpSpace | None = None,
                    batch_size: int = 256, search_seed: int = 0, log=None) -> ExperimentReport:
    """Each method gets the same budget. Random initialization searches
    (learning rate, depth, width); tree-based methods first tune the tree
    predictor on its own validation score, then tune (learning rate, depth,
    strengths) with the width fixed."""
    methods = _validate_methods(methods)
    mlp_space = mlp_space or MlpSpace(width=(16, width))
    search_epochs = epochs if search_epochs is None else search_epochs
    split = tuning_split(ds, search_seed, k)
    say = log or (lambda msg: None)
    n_tree, n_mlp = p2_split(budget) if any(m in TREE_INITS for m in methods) else (0, budget)
    report = ExperimentReport("p2", ds.task, METRIC_FOR_TASK[ds.task],
                              meta={"budget": budget, "split": {"tree": n_tree, "mlp": n_mlp},
                                    "width": width, "seeds": list(seeds), "epochs": epochs,
                                    "search_epochs": search_epochs, "k": k, "max_folds": max_folds,
                                    "search_seed": search_seed})
    for m in methods:
        if m == "random":
            space = SearchSpace({"learning_rate": LogUniform(*mlp_space.learning_rate),
                                 "depth": IntRange(*mlp_space.depth),
                                 "width": IntRange(*mlp_space.width, log=True)})

            def obj(p):
                init = InitSpec("random", p["width"], p["depth"], seed=search_seed)
                tc = TrainConfig(search_epochs, batch_size, p["learning_rate"], seed=search_seed)
                return mlp_objective(split, init, tc)

            best, trials = random_search(space, budget, obj, search_seed)
            spec = MethodSpec("random", init=InitSpec("random", best["width"], best["depth"]),
                              train=TrainConfig(epochs, batch_size, best["learning_rate"]))
            split_info = {"mlp": budget}
        else:
            tseed = derived_seed(search_seed, 3, TREE_INITS.index(m))
            tbest, ttrials = random_search(
                tree_space(ds, m, width), n_tree,
                lambda p, m=m: tree_objective(split, m, tree_config(ds, m, width, p, search_seed)), tseed)
            tcfg = tree_config(ds, m, width, tbest)
            n_copied = 3 * tcfg.forest_depth - 1 if m == "df" else 2
            space = SearchSpace({"learning_rate": LogUniform(*mlp_space.learning_rate),
                                 "depth": IntRange(max(3, n_copied + 1), max(mlp_space.depth[1], n_copied + 1)),
                                 **strength_space(m).dims})

            def obj(p, m=m, tcfg=tcfg):
                init = InitSpec(m, width, p["depth"], strengths_of(p), replace(tcfg, seed=search_seed),
                                search_seed)
                tc = TrainConfig(search_epochs, batch_size, p["learning_rate"], seed=search_seed)
                return mlp_objective(split, init, tc)

            best, mtrials = random_search(space, n_mlp, obj, tseed + 1)
            trials = ttrials + [replace(t, index=t.index + n_tree) for t in mtrials]
            spec = MethodSpec(m, init=InitSpec(m, width, best["depth"], strengths_of(best), tcfg),
                              train=TrainConfig(epochs, batch_size, best["learning_rate"]))
            split_info = {"tree": n_tree, "mlp": n_mlp, "tree_config": tbest}
        say(f"{m}: tuned {spec.describe()}")
        res = cross_validate(ds, spec, k, len(seeds), seeds, max_folds)
        res.search = trials
        res.search_split = split_info
        report.add(res)
        say(f"{m}: {res.mean:.4f} +- {res.std:.4f}")
    return report


def width_sweep(ds: Dataset, methods=("random", "gbdt"), widths=(32, 64, 128, 256, 512),
                depth: int = 3, learning_rate: float = 1e-3, tree_params: dict | None = None,
                strengths: Strengths = Strengths(3.0, 0.3, 1.0, 1.0), seeds=(0,), epochs: int = 100,
                k: int = 5, max_folds: int | None = 1, batch_size: int = 256) -> list[dict]:
    """Score each initializer at each MLP width with every other setting held
    fixed. Tree ensembles grow with the width (as many trees as fit)."""
    methods = _validate_methods(methods)
    tree_params = tree_params or {"max_depth": 3}
    rows = []
    for w in widths:
        for m in methods:
            tcfg = tree_config(ds, m, w, tree_params) if m != "random" else TreeFitConfig()
            spec = MethodSpec(m, init=InitSpec(m, int(w), depth, strengths, tcfg),
                              train=TrainConfig(epochs, batch_size, learning_rate))
            try:
                res = cross_validate(ds, spec, k, len(seeds), seeds, max_folds, keep_history=False)
            except ConfigError as exc:
                # the translated leaf layer does not fit this width
                rows.append({"width": int(w), "method": m, "mean": math.nan, "std": math.nan,
                             "n_folds": 0, "note": str(exc)})
                continue
            rows.append({"width": int(w), "method": m, "mean": res.mean, "std": res.std,
                         "n_folds": len(res.values), "note": ""})
    return rows


# ------------------------------------------------------ cancellation sweep


def cancellation_sweep(depths=range(2, 13, 2), n_train: int = 20000, n_eval: int = 10000,
                       dtype=np.float32, seed: int = 0) -> list[dict]:
    """Fidelity of exact single-tree translations evaluated in ``dtype``,
    with the halved two-sum readout and with the compensated one.

    Trees are fitted to Friedman #1 samples; evaluation inputs are rounded to
    ``dtype`` first so both sides route every point identically.
    """
    from .data import friedman1
    from .translate import cancellation_compensated_readout, fidelity, translate_tree_exact

    ds = friedman1(n_train, 1.0, 5, seed)
    rng = np.random.default_rng(derived_seed(seed, 1))
    X = rng.uniform(0.0, 1.0, size=(n_eval, ds.d)).astype(dtype).astype(np.float64)
    rows = []
    for depth in depths:
        model = fit_model("cart", ds, cfg=TreeFitConfig(max_depth=int(depth), seed=seed))
        tree = model.trees[0]
        stack = translate_tree_exact(tree)
        plain = fidelity(model, stack, X, dtype)
        comp = fidelity(model, cancellation_compensated_readout(stack), X, dtype)
        rows.append({"depth": int(depth), "n_leaves": tree.n_leaves,
                     "plain_mean": plain.mean, "plain_max": plain.max,
                     "compensated_mean": comp.mean, "compensated_max": comp.max})
    return rows


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != 1:
        raise ValueError(f"{path}: unsupported report format")
    return doc
