import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_classification, make_regression
from treeseed.data import ColumnSchema, Dataset
from treeseed.trees import (Tree, TreeFitConfig, TreeModel, apply_tree, fit_cart,
                            fit_completely_random_tree, fit_deep_forest, fit_gbdt, fit_model,
                            fit_random_forest, gbdt_loss, load_model, predict_model, predict_proba,
                            predict_tree, save_model)


def line(y, task="regression", n_classes=1):
    X = np.arange(len(y), dtype=float)[:, None]
    return Dataset(X, y, [ColumnSchema("x")], task, n_classes)


def stump(t=1.5, lo=0.0, hi=10.0):
    # inner node 0 splits feature 0 at t; children are leaves 0 and 1
    return Tree(np.array([0]), np.array([t]), np.array([~0]), np.array([~1]),
                np.array([[lo], [hi]]), 1)


def test_cart_regression_stump():
    tree = fit_cart(line(np.array([0.0, 0, 10, 10])), cfg=TreeFitConfig(max_depth=1))
    assert tree.n_inner == 1 and tree.threshold[0] == 1.5
    assert tree.values[:, 0].tolist() == [0.0, 10.0]


def test_cart_gini_stump():
    ds = line(np.array([0, 0, 1, 1]), "binary", 2)
    tree = fit_cart(ds, cfg=TreeFitConfig(max_depth=1))
    assert tree.threshold[0] == 1.5
    assert tree.values.tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_cart_constant_target_is_single_leaf():
    tree = fit_cart(line(np.full(6, 3.25)), cfg=TreeFitConfig(max_depth=5))
    assert tree.n_inner == 0 and tree.n_leaves == 1
    assert predict_tree(tree, np.array([[100.0]]))[0, 0] == 3.25


def test_cart_empty_rows():
    with pytest.raises(ValueError):
        fit_cart(line(np.zeros(4)), rows=np.array([], dtype=int))


def test_stump_routing_and_tie():
    tree = stump()
    assert predict_tree(tree, np.array([1.0]))[0] == 0.0
    assert predict_tree(tree, np.array([2.0]))[0] == 10.0
    # equality goes left
    assert predict_tree(tree, np.array([1.5]))[0] == 0.0


def test_predict_dimension_mismatch():
    with pytest.raises(ValueError):
        predict_tree(stump(), np.zeros((3, 2)))


def test_leaf_paths_of_stump():
    assert stump().leaf_paths() == [([0], []), ([], [0])]


def test_forest_of_two_stumps_averages():
    model = TreeModel("forest", [stump(lo=0, hi=0), stump(lo=10, hi=10)], [0.5, 0.5], [0.0], 1, 1)
    assert predict_model(model, np.array([0.0]))[0] == 5.0


def test_forest_single_tree_without_bootstrap_equals_cart(reg_ds):
    cfg = TreeFitConfig(max_depth=4, n_estimators=1, bootstrap=False, max_features=0.5, seed=3)
    rf = fit_random_forest(reg_ds, cfg=cfg)
    tree = fit_cart(reg_ds, cfg=cfg)
    np.testing.assert_array_equal(predict_model(rf, reg_ds.X), predict_tree(tree, reg_ds.X))


def test_forest_is_mean_of_trees(bin_ds):
    rf = fit_random_forest(bin_ds, cfg=TreeFitConfig(max_depth=3, n_estimators=5, seed=1))
    mean = np.mean([predict_tree(t, bin_ds.X) for t in rf.trees], axis=0)
    np.testing.assert_allclose(predict_model(rf, bin_ds.X), mean, atol=1e-12)
    np.testing.assert_allclose(rf.weights, 0.2)


def test_forest_deterministic_and_thread_independent(reg_ds, monkeypatch):
    cfg = TreeFitConfig(max_depth=4, n_estimators=6, max_features=0.5, seed=11)
    a = fit_random_forest(reg_ds, cfg=cfg)
    monkeypatch.setenv("TREESEED_THREADS", "3")
    b = fit_random_forest(reg_ds, cfg=cfg)
    for ta, tb in zip(a.trees, b.trees):
        np.testing.assert_array_equal(ta.threshold, tb.threshold)
        np.testing.assert_array_equal(ta.values, tb.values)


def test_crf_threshold_strictly_inside():
    X = np.linspace(0, 4, 9)[:, None]
    y = (X[:, 0] > 2).astype(float)
    ds = Dataset(X, y, [ColumnSchema("x")])
    for seed in range(10):
        tree = fit_completely_random_tree(ds, cfg=TreeFitConfig(max_depth=1), rng=np.random.default_rng(seed))
        assert 0 < tree.threshold[0] < 4
        assert len(np.unique(apply_tree(tree, X))) == 2


def test_crf_pure_node_is_leaf():
    tree = fit_completely_random_tree(line(np.ones(5)), cfg=TreeFitConfig(max_depth=3))
    assert tree.n_inner == 0


def test_crf_deterministic(reg_ds):
    cfg = TreeFitConfig(max_depth=5)
    a = fit_completely_random_tree(reg_ds, cfg=cfg, rng=np.random.default_rng(4))
    b = fit_completely_random_tree(reg_ds, cfg=cfg, rng=np.random.default_rng(4))
    np.testing.assert_array_equal(a.threshold, b.threshold)


def test_gbdt_hand_example():
    ds = line(np.array([0.0, 0, 10, 10]))
    m = fit_gbdt(ds, cfg=TreeFitConfig(max_depth=1, n_estimators=1, eta=1.0))
    assert m.base.tolist() == [5.0]
    assert m.trees[0].values[:, 0].tolist() == [-5.0, 5.0]
    np.testing.assert_allclose(predict_model(m, ds.X)[:, 0], [0, 0, 10, 10])


def test_gbdt_zero_shrinkage_is_constant(reg_ds):
    m = fit_gbdt(reg_ds, cfg=TreeFitConfig(max_depth=3, n_estimators=4, eta=0.0))
    np.testing.assert_array_equal(predict_model(m, reg_ds.X)[:, 0], np.full(reg_ds.n, m.base[0]))


def test_gbdt_without_trees_is_base():
    m = TreeModel("gbdt", [], [], [2.5], 3, 1)
    assert predict_model(m, np.zeros((2, 3)))[:, 0].tolist() == [2.5, 2.5]


@pytest.mark.parametrize("task", ["regression", "binary", "multiclass"])
def test_gbdt_training_loss_non_increasing(task):
    for seed in range(10):
        if task == "regression":
            ds = make_regression(seed=seed)
        else:
            ds = make_classification(n_classes=2 if task == "binary" else 3, seed=seed)
        m = fit_gbdt(ds, cfg=TreeFitConfig(max_depth=2, n_estimators=8, eta=0.3, seed=seed))
        loss = np.array(m.train_loss)
        assert np.all(np.diff(loss) <= 1e-12)
        assert loss[-1] == pytest.approx(gbdt_loss(task, predict_model(m, ds.X), ds.y))


def test_gbdt_multiclass_one_tree_per_class(multi_ds):
    m = fit_gbdt(multi_ds, cfg=TreeFitConfig(max_depth=2, n_estimators=3))
    assert len(m.trees) == 9
    assert m.targets.tolist() == [0, 1, 2] * 3
    p = predict_proba(m, multi_ds.X)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_gbdt_binary_base_is_log_odds(bin_ds):
    m = fit_gbdt(bin_ds, cfg=TreeFitConfig(max_depth=2, n_estimators=2))
    p = bin_ds.y.mean()
    assert m.base[0] == pytest.approx(np.log(p / (1 - p)))


def test_deep_forest_single_rf_matches_forest(bin_ds):
    cfg = TreeFitConfig(max_depth=3, n_estimators=4, forests=("rf",), forest_depth=1, seed=2)
    df = fit_deep_forest(bin_ds, np.arange(150), cfg, np.arange(150, 200))
    rf = fit_random_forest(bin_ds, np.arange(150), cfg)
    np.testing.assert_array_equal(predict_model(df, bin_ds.X), predict_model(rf, bin_ds.X))


def test_deep_forest_layer_input_width():
    ds = make_classification(d=3)
    cfg = TreeFitConfig(max_depth=3, n_estimators=2, forest_depth=2)
    df = fit_deep_forest(ds, np.arange(150), cfg, np.arange(150, 200))
    assert df.layers[1][0].n_features == 3 + 2 * 2
    assert df.layer_scores[df.best_layer] >= df.layer_scores[0]


def test_deep_forest_manual_cascade(reg_ds):
    cfg = TreeFitConfig(max_depth=3, n_estimators=3, forest_depth=2)
    df = fit_deep_forest(reg_ds, np.arange(150), cfg, np.arange(150, 200))
    df.best_layer = 1
    X = reg_ds.X[:3]
    first = [np.mean([predict_tree(t, X) for t in f.trees], axis=0) for f in df.layers[0]]
    Z = np.hstack([X] + first)
    second = [np.mean([predict_tree(t, Z) for t in f.trees], axis=0) for f in df.layers[1]]
    np.testing.assert_allclose(predict_model(df, X), np.mean(second, axis=0), atol=1e-12)


def test_deep_forest_needs_validation(reg_ds):
    with pytest.raises(ValueError):
        fit_deep_forest(reg_ds, None, TreeFitConfig(), [])


def test_config_validation():
    with pytest.raises(ValueError):
        TreeFitConfig(max_depth=0)
    with pytest.raises(ValueError):
        TreeFitConfig(n_estimators=0)
    with pytest.raises(ValueError):
        TreeFitConfig(max_features=0.0)


@pytest.mark.parametrize("method", ["cart", "rf", "crf", "gbdt", "df"])
def test_model_json_roundtrip(tmp_path, method, multi_ds):
    cfg = TreeFitConfig(max_depth=3, n_estimators=2, forest_depth=2)
    m = fit_model(method, multi_ds, np.arange(150), cfg, np.arange(150, 200))
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(predict_model(back, multi_ds.X), predict_model(m, multi_ds.X))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), depth=st.integers(1, 7), classif=st.booleans())
def test_tree_structure_properties(seed, depth, classif):
    ds = make_classification(n=80, seed=seed) if classif else make_regression(n=80, seed=seed)
    tree = fit_cart(ds, cfg=TreeFitConfig(max_depth=depth, seed=seed))
    assert tree.n_leaves == tree.n_inner + 1
    assert tree.depth() <= depth
    if classif:
        assert np.all(tree.values >= 0)
        np.testing.assert_allclose(tree.values.sum(axis=1), 1.0, atol=1e-12)
    # an independent walk over the node arrays agrees, including on inputs
    # placed exactly on thresholds
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((20, ds.d))
    for m in range(tree.n_inner):
        X[m % 20, tree.feature[m]] = tree.threshold[m]
    np.testing.assert_array_equal(apply_tree(tree, X), [walk(tree, x) for x in X])


def walk(tree, x):
    node = 0
    if tree.n_inner == 0:
        return 0
    while True:
        c = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
        if c < 0:
            return ~c
        node = c
