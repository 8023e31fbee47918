import csv
import json

import pytest

from treeseed.cli import config_hash, main


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def fried(tmp_path):
    out = tmp_path / "data"
    assert run("gen", "--kind", "friedman1", "--n", 400, "--seed", 1, "--out", out) == 0
    return out / "friedman1.csv"


@pytest.fixture
def xor(tmp_path):
    out = tmp_path / "data"
    assert run("gen", "--kind", "xor", "--n", 300, "--flip-prob", 0.1, "--out", out) == 0
    return out / "xor.csv"


def read_json(p):
    return json.loads(p.read_text())


def test_gen_shape_and_determinism(tmp_path, capsys):
    assert run("gen", "--kind", "friedman1", "--n", 5000, "--seed", 1, "--out", tmp_path / "a") == 0
    assert "5000 rows" in capsys.readouterr().out
    run("gen", "--kind", "friedman1", "--n", 5000, "--seed", 1, "--out", tmp_path / "b")
    a = (tmp_path / "a" / "friedman1.csv").read_bytes()
    assert a == (tmp_path / "b" / "friedman1.csv").read_bytes()
    assert len(a.splitlines()) == 5001


def test_gen_rejects_bad_flip_prob(tmp_path):
    assert run("gen", "--kind", "xor", "--flip-prob", 0.6, "--out", tmp_path) == 2
    assert run("gen", "--kind", "moons", "--out", tmp_path) == 2


def test_fit_rf_tree_count(fried, tmp_path):
    out = tmp_path / "rf"
    assert run("fit", "--data", fried, "--method", "rf", "--max-depth", 8, "--n-estimators", 8, "--out", out) == 0
    model = read_json(out / "model.json")
    assert len(model["trees"]) == 8 and model["format_version"] == 1
    metrics = read_json(out / "metrics.json")
    assert metrics["metric"] == "mse" and metrics["val"] > 0
    man = read_json(out / "fit_manifest.json")
    assert man["status"] == "ok" and set(man["emitted"]) == {"model.json", "metrics.json"}
    assert man["config_hash"] == config_hash(man["config"])
    assert str(fried) in man["inputs"]


def test_fit_gbdt_zero_eta(fried, tmp_path):
    from treeseed.trees import load_model, predict_model

    out = tmp_path / "g"
    assert run("fit", "--data", fried, "--method", "gbdt", "--eta", 0, "--out", out) == 0
    model = load_model(out / "model.json")
    import numpy as np

    pred = predict_model(model, np.random.default_rng(0).uniform(size=(20, 10)))
    assert np.all(pred == model.base)


def test_fit_df_records_best_layer(xor, tmp_path):
    out = tmp_path / "df"
    assert run("fit", "--data", xor, "--method", "df", "--forest-depth", 2, "--max-depth", 3,
               "--n-estimators", 3, "--out", out) == 0
    assert "best_layer" in read_json(out / "fit_manifest.json")["records"]


def test_fit_task_mismatch_is_config_error(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("a,y\n1,cat\n2,dog\n")
    (tmp_path / "d.schema.json").write_text(json.dumps(
        {"columns": [{"name": "a"}], "target": "y", "task": "regression"}))
    assert run("fit", "--data", data, "--out", tmp_path / "o") == 2


def test_bad_data_exit_code(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("a,y\nfoo,1\n")
    (tmp_path / "d.schema.json").write_text(json.dumps(
        {"columns": [{"name": "a"}], "target": "y", "task": "regression"}))
    assert run("fit", "--data", data, "--out", tmp_path / "o") == 3
    assert run("fit", "--data", tmp_path / "missing.csv", "--out", tmp_path / "o") == 3


def test_translate_exact_and_relaxed(fried, tmp_path):
    fit_out = tmp_path / "f"
    run("fit", "--data", fried, "--method", "cart", "--max-depth", 3, "--out", fit_out)
    out = tmp_path / "t"
    assert run("translate", "--model", fit_out / "model.json", "--data", fried, "--exact",
               "--strengths", "1e10,1e10,1e10,1e10", "--compensated", "--out", out) == 0
    fid = read_json(out / "fidelity.json")
    assert fid["exact"]["mean"] <= 1e-12
    assert fid["relaxed_vs_exact"]["mean"] <= 1e-6
    assert fid["compensated"]["mean"] <= 1e-12
    assert (out / "stack_exact.json").exists() and (out / "stack_relaxed.json").exists()
    assert run("translate", "--model", fit_out / "model.json", "--strengths", "1,0,1,1", "--out", out) == 2


def test_translate_depth_sweep(tmp_path):
    out = tmp_path / "s"
    assert run("translate", "--depth-sweep", "2:4", "--dtype", "float32", "--out", out) == 0
    rows = list(csv.DictReader((out / "depth_sweep.csv").open()))
    assert [int(r["depth"]) for r in rows] == [2, 3, 4]
    assert run("translate", "--depth-sweep", "4-2", "--out", out) == 2
    assert run("translate", "--out", out) == 2


def test_train_history_and_sparsity(fried, tmp_path):
    out = tmp_path / "r"
    args = ["train", "--data", fried, "--init", "random", "--width", 64, "--depth", 3, "--epochs", 5]
    assert run(*args, "--out", out) == 0
    lines = (out / "history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_metric,seconds" and len(lines) == 6
    g = tmp_path / "g"
    assert run("train", "--data", fried, "--init", "gbdt", "--width", 64, "--depth", 3, "--epochs", 2,
               "--max-depth", 3, "--n-estimators", 8, "--strengths", "10,1,1,1", "--out", g) == 0
    rand0 = read_json(out / "sparsity.json")["epoch0"]["layers"][0]["fraction_below"]
    tree0 = read_json(g / "sparsity.json")["epoch0"]["layers"][0]["fraction_below"]
    assert tree0 > rand0


def test_train_is_reproducible(fried, tmp_path):
    for name in ("a", "b"):
        run("train", "--data", fried, "--width", 16, "--epochs", 3, "--seed", 4, "--out", tmp_path / name)
    strip = lambda p: [l.rsplit(",", 1)[0] for l in p.read_text().splitlines()]
    assert strip(tmp_path / "a" / "history.csv") == strip(tmp_path / "b" / "history.csv")
    assert (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()


def test_train_width_error_names_both(fried, tmp_path, capsys):
    code = run("train", "--data", fried, "--init", "gbdt", "--width", 8, "--max-depth", 4,
               "--n-estimators", 4, "--out", tmp_path)
    assert code == 2
    err = capsys.readouterr().err
    assert "exceeds MLP width 8" in err


def test_config_file_and_unknown_keys(fried, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": str(fried), "width": 16, "epochs": 2}))
    assert run("train", "--config", cfg, "--epochs", 1, "--out", tmp_path / "o") == 0
    man = read_json(tmp_path / "o" / "train_manifest.json")
    assert man["config"]["width"] == 16 and man["config"]["epochs"] == 1
    cfg.write_text(json.dumps({"data": str(fried), "widht": 16}))
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 2


def test_experiment_and_report(xor, tmp_path, capsys):
    out = tmp_path / "e"
    assert run("experiment", "--data", xor, "--protocol", "p1", "--methods", "random,rf,gbdt",
               "--budget", 2, "--width", 32, "--epochs", 2, "--folds", 3, "--max-folds", 1,
               "--out", out) == 0
    rep = read_json(out / "report.json")
    assert set(rep["methods"]) == {"random", "rf", "gbdt"} and rep["format_version"] == 1
    assert (out / "curves.csv").exists() and (out / "summary.txt").exists()
    capsys.readouterr()
    assert run("report", "--report", out / "report.json") == 0
    assert "+-" in capsys.readouterr().out


def test_experiment_p2_records_split(xor, tmp_path):
    out = tmp_path / "p2"
    assert run("experiment", "--data", xor, "--protocol", "p2", "--methods", "random,gbdt",
               "--budget", 4, "--width", 32, "--epochs", 2, "--folds", 3, "--max-folds", 1,
               "--out", out) == 0
    assert read_json(out / "experiment_manifest.json")["records"]["budget_split"] == {"tree": 1, "mlp": 3}
    assert run("experiment", "--data", xor, "--protocol", "p2", "--methods", "gbdt", "--budget", 6,
               "--out", out) == 2
