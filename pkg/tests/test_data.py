import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treeseed.data import (ColumnSchema, Dataset, friedman1, friedman1_target, holdout_split,
                           label_encode, load_csv, make_folds, normalize_apply, normalize_fit,
                           read_schema, save_csv, write_schema, xor_classif, xor_labels)
from treeseed.errors import DataError, SchemaError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_numeric_and_categorical(tmp_path):
    p = write(tmp_path, "a,c,y\n1.5,red,2\n-2,blue,3\n0,red,4\n")
    schema = [ColumnSchema("a"), ColumnSchema("c", "categorical")]
    ds = load_csv(p, schema, "y", "regression")
    assert ds.n == 3 and ds.d == 2
    assert np.isnan(ds.X[:, 1]).all()
    enc = label_encode(ds)
    # levels sorted lexicographically, codes start at 1
    assert enc.schema[1].levels == ("blue", "red")
    assert enc.X[:, 1].tolist() == [2.0, 1.0, 2.0]
    assert enc.y.tolist() == [2.0, 3.0, 4.0]


def test_label_encode_unseen_level_maps_to_zero(tmp_path):
    p = write(tmp_path, "c,y\nb,0\na,1\nz,0\n")
    ds = load_csv(p, [ColumnSchema("c", "categorical")], "y", "binary")
    enc = label_encode(ds, train_rows=[0, 1])
    assert enc.X[:, 0].tolist() == [2.0, 1.0, 0.0]


def test_missing_column_is_named(tmp_path):
    p = write(tmp_path, "a,y\n1,2\n")
    with pytest.raises(SchemaError, match="'b'"):
        load_csv(p, [ColumnSchema("a"), ColumnSchema("b")], "y", "regression")


def test_parse_error_reports_location(tmp_path):
    p = write(tmp_path, "a,y\n1,2\nfoo,3\n")
    with pytest.raises(DataError, match="row 2, column 'a'"):
        load_csv(p, [ColumnSchema("a")], "y", "regression")


def test_class_labels_sort_numerically(tmp_path):
    p = write(tmp_path, "a,y\n1,10\n2,2\n3,2\n4,1\n")
    ds = load_csv(p, [ColumnSchema("a")], "y", "multiclass")
    assert ds.target_levels == ("1", "2", "10")
    assert ds.y.tolist() == [2, 1, 1, 0]


def test_binary_needs_two_levels(tmp_path):
    p = write(tmp_path, "a,y\n1,0\n2,1\n3,2\n")
    with pytest.raises(DataError):
        load_csv(p, [ColumnSchema("a")], "y", "binary")


def test_schema_roundtrip(tmp_path):
    schema = [ColumnSchema("a"), ColumnSchema("b", "categorical")]
    write_schema(tmp_path / "s.json", schema, "y", "binary")
    cols, target, task = read_schema(tmp_path / "s.json")
    assert [c.name for c in cols] == ["a", "b"] and cols[1].kind == "categorical"
    assert (target, task) == ("y", "binary")
    assert json.loads((tmp_path / "s.json").read_text())["format_version"] == 1


def test_csv_roundtrip_is_exact(tmp_path):
    ds = friedman1(50, seed=3)
    save_csv(tmp_path / "f.csv", ds)
    back = load_csv(tmp_path / "f.csv", ds.schema, "y", "regression")
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)


def test_normalize_uses_training_rows_only():
    X = np.array([[0.0, 5.0], [2.0, 5.0], [100.0, 5.0]])
    ds = Dataset(X, np.zeros(3), [ColumnSchema("a"), ColumnSchema("b")])
    stats = normalize_fit(ds, [0, 1])
    assert stats.mean.tolist() == [1.0, 5.0]
    assert stats.std.tolist() == [1.0, 0.0]
    out = normalize_apply(ds, stats)
    # zero-variance column is centred only
    assert out.X[:, 0].tolist() == [-1.0, 1.0, 99.0]
    assert out.X[:, 1].tolist() == [0.0, 0.0, 0.0]


def test_normalize_rejects_bad_input(reg_ds):
    with pytest.raises(ValueError):
        normalize_fit(reg_ds, [])
    stats = normalize_fit(reg_ds)
    with pytest.raises(ValueError):
        normalize_apply(friedman1(5), stats)


def test_folds_partition_rows(bin_ds):
    plan = make_folds(bin_ds, 5, stratified=True, seed=0)
    seen = np.concatenate([plan.test_rows(f) for f in range(5)])
    assert sorted(seen.tolist()) == list(range(bin_ds.n))
    for f in range(5):
        assert not set(plan.test_rows(f)) & set(plan.train_rows(f))
        counts = np.bincount(bin_ds.y[plan.test_rows(f)], minlength=2)
        assert abs(counts[0] - counts[1]) <= 2


def test_fold_count_checked(reg_ds):
    with pytest.raises(ValueError):
        make_folds(reg_ds, 1)
    with pytest.raises(ValueError):
        make_folds(reg_ds.subset(np.arange(3)), 4)


def test_folds_deterministic(reg_ds):
    a = make_folds(reg_ds, 5, seed=7).assignments
    b = make_folds(reg_ds, 5, seed=7).assignments
    np.testing.assert_array_equal(a, b)


def test_holdout_split_stratified(bin_ds):
    kept, out = holdout_split(np.arange(bin_ds.n), 0.2, 0, bin_ds.y)
    assert len(out) == 40 and len(kept) == 160
    assert not set(kept) & set(out)
    assert abs(np.mean(bin_ds.y[out]) - np.mean(bin_ds.y)) < 0.05


def test_friedman1_target_matches_formula():
    ds = friedman1(100, noise_sd=0.0, d_extra=2, seed=1)
    x = ds.X
    ref = 10 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 20 * (x[:, 2] - 0.5) ** 2 + 10 * x[:, 3] + 5 * x[:, 4]
    np.testing.assert_allclose(ds.y, ref)
    assert ds.d == 7 and x.min() >= 0 and x.max() <= 1


def test_friedman1_noise_level():
    ds = friedman1(20000, noise_sd=1.0, seed=2)
    resid = ds.y - friedman1_target(ds.X)
    assert abs(resid.std() - 1.0) < 0.03


def test_xor_flip_rate():
    ds = xor_classif(20000, flip_prob=0.1, seed=0)
    assert abs(np.mean(ds.y != xor_labels(ds.X)) - 0.1) < 0.01
    with pytest.raises(ValueError):
        xor_classif(10, flip_prob=0.6)


def test_generators_deterministic():
    a, b = friedman1(30, seed=5), friedman1(30, seed=5)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(4, 60), k=st.integers(2, 4), seed=st.integers(0, 1000))
def test_folds_property(n, k, seed):
    ds = friedman1(n, seed=seed)
    if k > n:
        return
    plan = make_folds(ds, k, seed=seed)
    sizes = np.bincount(plan.assignments, minlength=k)
    assert sizes.max() - sizes.min() <= 1
    for f in range(k):
        assert np.intersect1d(plan.train_rows(f), plan.test_rows(f)).size == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10000))
def test_normalized_training_columns_standard(seed):
    ds = friedman1(40, seed=seed)
    out = normalize_apply(ds, normalize_fit(ds))
    np.testing.assert_allclose(out.X.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(out.X.std(axis=0), 1, atol=1e-12)
