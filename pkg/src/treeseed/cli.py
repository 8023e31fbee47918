"""Command-line entry point: ``treeseed {gen,fit,translate,train,experiment,report}``.

Every command resolves its settings as defaults < ``--config`` JSON file <
explicit flags, writes its outputs into ``--out`` and keeps a manifest there
listing the resolved config, seeds, input hashes and emitted files.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .data import (Dataset, friedman1, holdout_split, label_encode, load_csv, read_schema, save_csv,
                   write_schema, xor_classif)
from .errors import ConfigError, DataError, NumericError, SchemaError
from .evaluation import (SearchFailed, cancellation_sweep, load_report, p2_split, run_protocol_p1,
                         run_protocol_p2, sparsity_stats, summary_table)
from .metrics import METRIC_FOR_TASK, UndefinedMetricError, task_metric
from .net import InitSpec, TrainConfig, initialize, save_checkpoint, train
from .translate import (Strengths, cancellation_compensated_readout, fidelity, relax, save_stack,
                        stack_forward, translate_exact)
from .trees import TreeFitConfig, fit_model, load_model, predict_model, save_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

TREE_KEYS = ("max_depth", "n_estimators", "max_features", "min_samples_leaf", "eta",
             "reg_lambda", "forest_depth", "bootstrap")

DEFAULTS = {
    "gen": {"kind": "friedman1", "n": 5000, "seed": 0, "noise_sd": 1.0, "d_extra": None,
            "flip_prob": 0.0, "out": "."},
    "fit": {"data": None, "schema": None, "method": "gbdt", "max_depth": 6, "n_estimators": 10,
            "max_features": 1.0, "min_samples_leaf": 1, "eta": 0.1, "reg_lambda": 0.0,
            "forest_depth": 1, "bootstrap": True, "val_fraction": 0.2, "seed": 0, "out": "."},
    "translate": {"model": None, "data": None, "schema": None, "exact": False, "strengths": None,
                  "compensated": False, "depth_sweep": None, "dtype": "float64", "sample": 1000,
                  "seed": 0, "out": "."},
    "train": {"data": None, "schema": None, "init": "random", "width": 64, "depth": 3,
              "epochs": 100, "batch_size": 256, "learning_rate": 1e-3, "strengths": "100,1,1,1",
              "max_depth": 3, "n_estimators": 10, "max_features": 1.0, "min_samples_leaf": 1,
              "eta": 0.1, "reg_lambda": 0.0, "forest_depth": 1, "bootstrap": True,
              "val_fraction": 0.2, "seed": 0, "out": "."},
    "experiment": {"data": None, "schema": None, "protocol": "p1", "methods": "random,rf,gbdt",
                   "budget": 20, "width": 256, "seeds": "0", "epochs": 100, "search_epochs": None,
                   "folds": 5, "max_folds": None, "seed": 0, "out": "."},
    "report": {"report": None, "out": None},
}
REQUIRED = {"fit": ("data",), "train": ("data",),
            "experiment": ("data",), "report": ("report",)}


def tool_version() -> str:
    try:
        return version("treeseed")
    except PackageNotFoundError:
        return "0+unknown"


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_json(path, doc) -> None:
    doc = {"format_version": 1, **doc}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True, default=_plain) + "\n",
                          encoding="utf-8")


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


class Run:
    """Output directory plus its manifest, written at start and on finish."""

    def __init__(self, command: str, cfg: dict, inputs=()):
        self.command = command
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.path = self.out / f"{command}_manifest.json"
        self.doc = {"command": command, "config": cfg, "config_hash": config_hash(cfg),
                    "tool_version": tool_version(), "seeds": {"seed": cfg.get("seed")},
                    "inputs": {str(p): file_hash(p) for p in inputs if p is not None},
                    "started": _now(), "finished": None, "status": "running", "emitted": [],
                    "records": {}}
        self._flush()

    def file(self, name: str) -> Path:
        p = self.out / name
        self.doc["emitted"].append(name)
        return p

    def record(self, key, value):
        self.doc["records"][key] = value

    def finish(self, status="ok"):
        self.doc["status"] = status
        self.doc["finished"] = _now()
        self.doc["emitted_hashes"] = {n: file_hash(self.out / n) for n in self.doc["emitted"]
                                      if (self.out / n).exists()}
        self._flush()

    def _flush(self):
        write_json(self.path, self.doc)


# ------------------------------------------------------------------ helpers


def _strengths(text) -> Strengths:
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        try:
            vals = [float(v) for v in str(text).split(",")]
        except ValueError:
            raise ConfigError(f"cannot parse strengths {text!r}") from None
    if len(vals) == 1:
        vals = vals * 4
    if len(vals) != 4:
        raise ConfigError("strengths need 1 or 4 comma-separated values")
    if not all(np.isfinite(v) and v > 0 for v in vals):
        raise ConfigError(f"strengths must lie in (0, inf), got {vals}")
    return Strengths(*vals)


def _load_data(cfg) -> tuple[Dataset, list]:
    data = Path(cfg["data"])
    schema_path = Path(cfg["schema"]) if cfg.get("schema") else data.with_suffix(".schema.json")
    if not data.exists():
        raise DataError(f"data file {data} not found")
    if not schema_path.exists():
        raise ConfigError(f"schema file {schema_path} not found (pass --schema)")
    cols, target, task = read_schema(schema_path)
    try:
        ds = load_csv(data, cols, target, task)
    except DataError as exc:
        if repr(target) in str(exc) or "binary task" in str(exc):
            raise ConfigError(f"target {target!r} does not fit declared task {task!r}: {exc}") from None
        raise
    ds = label_encode(ds)
    return ds, [data, schema_path]


def _tree_cfg(cfg) -> TreeFitConfig:
    return TreeFitConfig(**{k: cfg[k] for k in TREE_KEYS}, seed=cfg["seed"])


def _split(ds, cfg):
    rows = np.arange(ds.n)
    y = None if ds.task == "regression" else ds.y
    return holdout_split(rows, cfg["val_fraction"], cfg["seed"], y)


def _score(task, out, y):
    try:
        return task_metric(task, out, y)
    except UndefinedMetricError:
        return None


# ---------------------------------------------------------------- commands


def cmd_gen(cfg) -> int:
    kind = cfg["kind"]
    if kind == "friedman1":
        d_extra = 5 if cfg["d_extra"] is None else cfg["d_extra"]
        ds = friedman1(cfg["n"], cfg["noise_sd"], d_extra, cfg["seed"])
    elif kind == "xor":
        if not 0.0 <= cfg["flip_prob"] < 0.5:
            raise ConfigError(f"flip_prob must lie in [0, 0.5), got {cfg['flip_prob']}")
        d_extra = 3 if cfg["d_extra"] is None else cfg["d_extra"]
        ds = xor_classif(cfg["n"], d_extra, cfg["flip_prob"], cfg["seed"])
    else:
        raise ConfigError(f"unknown generator {kind!r}; expected friedman1 or xor")
    run = Run("gen", cfg)
    save_csv(run.file(f"{kind}.csv"), ds)
    write_schema(run.file(f"{kind}.schema.json"), ds.schema, "y", ds.task)
    run.finish()
    print(f"{kind}: {ds.n} rows x {ds.d} features ({ds.task}) -> {run.out / (kind + '.csv')}")
    return EXIT_OK


def cmd_fit(cfg) -> int:
    ds, inputs = _load_data(cfg)
    if cfg["method"] not in ("cart", "rf", "crf", "gbdt", "df"):
        raise ConfigError(f"unknown method {cfg['method']!r}")
    tcfg = _tree_cfg(cfg)
    run = Run("fit", cfg, inputs)
    tr, va = _split(ds, cfg)
    model = fit_model(cfg["method"], ds, tr, tcfg, va)
    save_model(model, run.file("model.json"))
    metric = METRIC_FOR_TASK[ds.task]
    metrics = {"metric": metric, "train": _score(ds.task, predict_model(model, ds.X[tr]), ds.y[tr]),
               "val": _score(ds.task, predict_model(model, ds.X[va]), ds.y[va]),
               "n_train": len(tr), "n_val": len(va)}
    if model.kind == "deep_forest":
        run.record("best_layer", model.best_layer)
        run.record("layer_scores", model.layer_scores)
        metrics["best_layer"] = model.best_layer
    write_json(run.file("metrics.json"), metrics)
    run.finish()
    print(f"{cfg['method']}: train {metric} {metrics['train']}, val {metric} {metrics['val']}")
    return EXIT_OK


def cmd_translate(cfg) -> int:
    strengths = _strengths(cfg["strengths"]) if cfg["strengths"] is not None else None
    dtype = np.dtype(cfg["dtype"])
    if cfg["depth_sweep"]:
        # the sweep fits its own trees, so no model file is needed
        try:
            lo, hi = (int(v) for v in str(cfg["depth_sweep"]).split(":"))
        except ValueError:
            raise ConfigError(f"--depth-sweep expects LO:HI, got {cfg['depth_sweep']!r}") from None
        if not 1 <= lo <= hi:
            raise ConfigError(f"--depth-sweep needs 1 <= LO <= HI, got {lo}:{hi}")
        run = Run("translate", cfg)
        rows = cancellation_sweep(range(lo, hi + 1), dtype=dtype, seed=cfg["seed"])
        with open(run.file("depth_sweep.csv"), "w", encoding="utf-8") as fh:
            keys = list(rows[0])
            fh.write(",".join(keys) + "\n")
            for r in rows:
                fh.write(",".join(repr(r[k]) for k in keys) + "\n")
        run.finish()
        for r in rows:
            print(f"depth {r['depth']:>2}: plain {r['plain_mean']:.3e}  compensated {r['compensated_mean']:.3e}")
        return EXIT_OK
    if cfg["model"] is None:
        raise ConfigError("translate: missing required setting --model")
    run_inputs = [cfg["model"]] + ([cfg["data"]] if cfg["data"] else [])
    if not Path(cfg["model"]).exists():
        raise DataError(f"model file {cfg['model']} not found")
    model = load_model(cfg["model"])
    if cfg["data"]:
        ds, _ = _load_data(cfg)
        X = ds.X
    else:
        # without data, probe with standard-normal inputs
        X = np.random.default_rng(cfg["seed"]).standard_normal((cfg["sample"], model.n_features))
    run = Run("translate", cfg, run_inputs)
    exact = translate_exact(model)
    report = {"dtype": dtype.name, "n_inputs": len(X)}
    report["exact"] = fidelity(model, exact, X, dtype)._asdict()
    if cfg["exact"] or strengths is None:
        save_stack(exact, run.file("stack_exact.json"))
    if cfg["compensated"]:
        comp = cancellation_compensated_readout(exact)
        save_stack(comp, run.file("stack_compensated.json"))
        report["compensated"] = fidelity(model, comp, X, dtype)._asdict()
    if strengths is not None:
        relaxed = relax(exact, strengths)
        save_stack(relaxed, run.file("stack_relaxed.json"))
        got = stack_forward(relaxed, X, dtype)
        ref = stack_forward(exact, X, dtype)
        diff = np.abs(got.astype(np.float64) - ref)
        report["relaxed"] = fidelity(model, relaxed, X, dtype)._asdict()
        report["relaxed_vs_exact"] = {"mean": float(diff.mean()), "max": float(diff.max())}
        report["strengths"] = strengths._asdict()
    write_json(run.file("fidelity.json"), report)
    run.finish()
    for k in ("exact", "compensated", "relaxed", "relaxed_vs_exact"):
        if k in report:
            print(f"{k}: mean {report[k]['mean']:.3e} max {report[k]['max']:.3e}")
    return EXIT_OK


def cmd_train(cfg) -> int:
    from .evaluation import prepare_split

    ds, inputs = _load_data(cfg)
    init = InitSpec(cfg["init"], cfg["width"], cfg["depth"], _strengths(cfg["strengths"]),
                    _tree_cfg(cfg), cfg["seed"])
    tcfg = TrainConfig(cfg["epochs"], cfg["batch_size"], cfg["learning_rate"], seed=cfg["seed"])
    run = Run("train", cfg, inputs)
    tr, va = _split(ds, cfg)
    dsn = prepare_split(ds, tr)
    mlp, model = initialize(dsn, init, tr, va)
    sparsity = {"epoch0": sparsity_stats(mlp)}
    last = {}
    best, hist = train(mlp, dsn.subset(tr), dsn.subset(va), tcfg,
                       lambda e, net, h: last.__setitem__("mlp", net))
    sparsity["last"] = sparsity_stats(last.get("mlp", mlp))
    sparsity["last_epoch"] = len(hist.val_loss)
    save_checkpoint(run.file("checkpoint.json"), best, epoch=hist.best_epoch)
    hist.to_csv(run.file("history.csv"))
    write_json(run.file("sparsity.json"), sparsity)
    write_json(run.file("metrics.json"), {
        "metric": METRIC_FOR_TASK[ds.task], "best_epoch": hist.best_epoch,
        "best_val_loss": hist.best_val_loss, "status": hist.status,
        "val": _score(ds.task, best(dsn.X[va]), ds.y[va])})
    if model is not None:
        save_model(model, run.file("initializer.json"))
    run.record("status", hist.status)
    run.finish("ok" if hist.status == "ok" else hist.status)
    print(f"{cfg['init']}: best val loss {hist.best_val_loss:.6g} at epoch {hist.best_epoch}")
    if hist.status == "diverged" and not hist.val_loss:
        raise NumericError("training diverged in the first epoch")
    return EXIT_OK


def _seed_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(s) for s in text]
    try:
        return [int(s) for s in str(text).split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse seeds {text!r}") from None


def cmd_experiment(cfg) -> int:
    ds, inputs = _load_data(cfg)
    methods = [m.strip() for m in str(cfg["methods"]).split(",") if m.strip()]
    seeds = _seed_list(cfg["seeds"])
    run = Run("experiment", cfg, inputs)
    run.doc["seeds"] = {"seed": cfg["seed"], "repeats": seeds}
    common = dict(budget=cfg["budget"], seeds=seeds, epochs=cfg["epochs"],
                  search_epochs=cfg["search_epochs"], k=cfg["folds"], max_folds=cfg["max_folds"],
                  search_seed=cfg["seed"], log=lambda msg: print(msg, flush=True))
    if cfg["protocol"] == "p1":
        report = run_protocol_p1(ds, methods, cfg["width"], **common)
    elif cfg["protocol"] == "p2":
        if any(m != "random" for m in methods):
            n_tree, n_mlp = p2_split(cfg["budget"])
            run.record("budget_split", {"tree": n_tree, "mlp": n_mlp})
        report = run_protocol_p2(ds, methods, width=cfg["width"], **common)
    else:
        raise ConfigError(f"unknown protocol {cfg['protocol']!r}")
    report.save(run.file("report.json"), run.file("curves.csv"))
    table = summary_table(report)
    run.file("summary.txt").write_text(table + "\n", encoding="utf-8")
    run.finish()
    print(table)
    return EXIT_OK


def cmd_report(cfg) -> int:
    if not Path(cfg["report"]).exists():
        raise DataError(f"report file {cfg['report']} not found")
    doc = load_report(cfg["report"])
    table = summary_table(doc)
    if cfg["out"]:
        run = Run("report", cfg, [cfg["report"]])
        run.file("summary.txt").write_text(table + "\n", encoding="utf-8")
        run.finish()
    print(table)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "translate": cmd_translate, "train": cmd_train,
            "experiment": cmd_experiment, "report": cmd_report}


# ------------------------------------------------------------------ parser


def _bool(text) -> bool:
    v = str(text).lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _tree_flags(p):
    p.add_argument("--max-depth", type=int)
    p.add_argument("--n-estimators", type=int)
    p.add_argument("--max-features", type=float)
    p.add_argument("--min-samples-leaf", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--reg-lambda", type=float)
    p.add_argument("--forest-depth", type=int)
    p.add_argument("--bootstrap", type=_bool)


def _data_flags(p):
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--schema", help="schema JSON (default: <data>.schema.json)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treeseed", argument_default=argparse.SUPPRESS,
                                     description="Tree-based initialization of tanh MLPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file of settings; flags override it")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        return p

    p = command("gen", "write a synthetic dataset")
    p.add_argument("--kind")
    p.add_argument("--n", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--d-extra", type=int)
    p.add_argument("--flip-prob", type=float)

    p = command("fit", "fit a tree-based model")
    _data_flags(p)
    p.add_argument("--method", choices=("cart", "rf", "crf", "gbdt", "df"))
    _tree_flags(p)
    p.add_argument("--val-fraction", type=float)

    p = command("translate", "translate a fitted model into layer stacks")
    p.add_argument("--model")
    _data_flags(p)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--strengths", help="s01,s12,s23,s_id or a single value")
    p.add_argument("--compensated", action="store_true")
    p.add_argument("--depth-sweep", help="LO:HI tree depths for the cancellation sweep")
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--sample", type=int)

    p = command("train", "initialize and train an MLP")
    _data_flags(p)
    p.add_argument("--init", choices=("random", "rf", "gbdt", "df"))
    p.add_argument("--width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--strengths")
    _tree_flags(p)
    p.add_argument("--val-fraction", type=float)

    p = command("experiment", "run tuning protocol p1 or p2")
    _data_flags(p)
    p.add_argument("--protocol", choices=("p1", "p2"))
    p.add_argument("--methods", help="comma-separated subset of random,rf,gbdt,df")
    p.add_argument("--budget", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--seeds", help="comma-separated repeat seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--search-epochs", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--max-folds", type=int)

    p = command("report", "print the summary table of a report")
    p.add_argument("--report")
    return parser


def resolve_config(command: str, given: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    path = given.pop("config", None)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        doc.pop("format_version", None)
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(doc)
    cfg.update(given)
    missing = [k for k in REQUIRED.get(command, ()) if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"{command}: missing required setting(s) {', '.join('--' + m for m in missing)}")
    return cfg


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    try:
        cfg = resolve_config(command, args)
        return COMMANDS[command](cfg)
    except (ConfigError, SchemaError, SearchFailed) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
