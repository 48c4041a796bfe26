import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1lrtree.data import (
    DataError,
    Dataset,
    FeatureColumn,
    Schema,
    build_design,
    complete_features,
    default_fold_count,
    fingerprint,
    load_csv,
    stratified_folds,
    to_csv_text,
    write_csv,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def small_dataset():
    cols = (
        FeatureColumn.numeric("GB", [5.0, np.nan, 8.5, 3.0]),
        FeatureColumn.categorical("Serology", ["Positive", "Negative", None, "Positive"]),
    )
    return Dataset(cols, np.array([1, 0, 1, 0]), "Severe")


# ---------------------------------------------------------------- load_csv


def test_load_four_rows(tmp_path):
    p = _write(tmp_path, "GB,Serology,Severe\n5,Positive,1\n6,Negative,0\n7,Positive,1\n8,Negative,0\n")
    ds = load_csv(p, {"GB": "numeric", "Serology": "categorical"}, "Severe")
    assert ds.n == 4
    assert ds.feature_names == ["GB", "Serology"]
    assert ds.column("Serology").levels == ("Negative", "Positive")
    assert ds.target.tolist() == [1, 0, 1, 0]


def test_empty_cell_marks_missing(tmp_path):
    p = _write(tmp_path, "GB,Severe\n5,1\n,0\nNA,1\n8,0\n")
    ds = load_csv(p, {"GB": "numeric"}, "Severe")
    assert ds.column("GB").missing_mask.tolist() == [False, True, True, False]


def test_non_binary_target_rejected(tmp_path):
    p = _write(tmp_path, "GB,Severe\n5,1\n6,0\n7,2\n")
    with pytest.raises(DataError, match="non-binary target"):
        load_csv(p, {"GB": "numeric"}, "Severe")


def test_absent_column_named(tmp_path):
    p = _write(tmp_path, "GB,Severe\n5,1\n6,0\n")
    with pytest.raises(DataError, match="Platelets"):
        load_csv(p, {"GB": "numeric", "Platelets": "numeric"}, "Severe")


def test_non_numeric_value_named(tmp_path):
    p = _write(tmp_path, "GB,Severe\n5,1\nabc,0\n")
    with pytest.raises(DataError, match="'GB'"):
        load_csv(p, {"GB": "numeric"}, "Severe")


def test_level_cap(tmp_path):
    body = "".join(f"L{k},{k % 2}\n" for k in range(70))
    p = _write(tmp_path, "C,y\n" + body)
    with pytest.raises(DataError, match="exceeds cap"):
        load_csv(p, {"C": "categorical"}, "y")


def test_positive_label_from_schema(tmp_path):
    p = _write(tmp_path, "GB,Outcome\n5,severe\n6,mild\n7,severe\n")
    s = _write(tmp_path, "[target]\nname = Outcome\npositive = severe\n[features]\nGB = numeric\n", "s.ini")
    ds = load_csv(p, Schema.from_file(s))
    assert ds.target.tolist() == [1, 0, 1]
    assert ds.labels == ("mild", "severe")


def test_schema_unknown_kind(tmp_path):
    s = _write(tmp_path, "[target]\nname = y\n[features]\nGB = ordinal\n", "s.ini")
    with pytest.raises(DataError, match="GB"):
        Schema.from_file(s)


def test_csv_round_trip(tmp_path):
    ds = small_dataset()
    p = tmp_path / "rt.csv"
    write_csv(ds, p)
    back = load_csv(p, Schema.for_dataset(ds))
    assert to_csv_text(back) == to_csv_text(ds)
    assert fingerprint(back) == fingerprint(ds)
    for a, b in zip(ds.columns, back.columns):
        assert a.kind == b.kind
        assert a.missing_mask.tolist() == b.missing_mask.tolist()
        assert a.labels() == b.labels()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.one_of(st.none(), st.floats(-1e6, 1e6, allow_nan=False)),
                          st.one_of(st.none(), st.sampled_from(["a", "b", "c d"])),
                          st.integers(0, 1)), min_size=2, max_size=30))
def test_round_trip_property(tmp_path_factory, rows):
    ys = [r[2] for r in rows]
    if len(set(ys)) < 2 or all(r[1] is None for r in rows):
        return
    ds = Dataset((FeatureColumn.numeric("x", [np.nan if r[0] is None else r[0] for r in rows]),
                  FeatureColumn.categorical("c", [r[1] for r in rows])), np.array(ys))
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(ds, p)
    back = load_csv(p, Schema.for_dataset(ds))
    assert np.array_equal(back.column("x").values, ds.column("x").values, equal_nan=True)
    assert back.column("c").labels() == ds.column("c").labels()
    assert back.target.tolist() == ys


def test_dataset_requires_both_classes():
    with pytest.raises(DataError, match="both target classes"):
        Dataset((FeatureColumn.numeric("x", [1.0, 2.0]),), np.array([1, 1]))


def test_frame_skips_class_check():
    ds = small_dataset()
    fr = ds.frame([0])
    assert fr.n == 1 and fr.column("GB").values[0] == 5.0


# ---------------------------------------------------------------- folds


def test_default_fold_count():
    assert default_fold_count(353) == 35
    assert default_fold_count(151) == 15
    assert default_fold_count(20) == 2
    with pytest.raises(DataError, match="too small"):
        default_fold_count(19)


def test_balanced_folds_exact():
    y = np.array([1] * 10 + [0] * 10)
    f = stratified_folds(y, 5, seed=3)
    for k in range(5):
        _, test = f.train_test(k)
        assert (y[test] == 1).sum() == 2 and (y[test] == 0).sum() == 2


def test_folds_deterministic():
    y = np.array([1] * 7 + [0] * 13)
    a = stratified_folds(y, 4, 9).fold_of_row
    b = stratified_folds(y, 4, 9).fold_of_row
    assert a.tolist() == b.tolist()


def test_folds_k_above_minority():
    with pytest.raises(DataError, match="minority"):
        stratified_folds(np.array([1] * 3 + [0] * 20), 4, 0)


def _check_fold_invariants(y, f):
    p = y.mean()
    assert sorted(set(f.fold_of_row.tolist())) == list(range(f.K))
    for cls in (0, 1):
        sizes = np.bincount(f.fold_of_row[y == cls], minlength=f.K)
        assert sizes.max() - sizes.min() <= 1
    for k in range(f.K):
        _, test = f.train_test(k)
        assert abs(y[test].mean() - p) <= 1.0 / len(test) + 1e-12


def test_353_rows_35_folds():
    y = np.array([1] * 151 + [0] * 202)
    f = stratified_folds(y, default_fold_count(353), 0)
    assert f.K == 35
    _check_fold_invariants(y, f)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 15), st.integers(0, 60), st.integers(0, 60), st.integers(0, 2**31))
def test_fold_invariants_property(K, extra_pos, extra_neg, seed):
    y = np.array([1] * (K + extra_pos) + [0] * (K + extra_neg))
    f = stratified_folds(y, K, seed)
    assert len(f.fold_of_row) == len(y)
    _check_fold_invariants(y, f)


# ---------------------------------------------------------------- design


def test_complete_features():
    ds = small_dataset()
    assert complete_features(ds) == []
    full = Dataset((FeatureColumn.numeric("a", [1.0, 2.0]), FeatureColumn.numeric("b", [np.nan, 1.0])),
                   np.array([0, 1]))
    assert complete_features(full) == ["a"]


def test_design_counts_and_standardization():
    ds = Dataset((FeatureColumn.numeric("Age", [20.0, 30.0, 45.0, 60.0]),
                  FeatureColumn.categorical("Sex", ["M", "F", "F", "M"])), np.array([0, 1, 0, 1]))
    d = build_design(ds, ["Age", "Sex"])
    assert d.matrix.shape == (4, 3)
    assert d.column_map == (("Age", None), ("Sex", "F"), ("Sex", "M"))
    assert np.allclose(d.matrix.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(d.matrix.std(axis=0), 1.0, atol=1e-10)


def test_design_drops_constant_column():
    ds = Dataset((FeatureColumn.numeric("a", [1.0, 1.0, 1.0]), FeatureColumn.numeric("b", [1.0, 2.0, 4.0])),
                 np.array([0, 1, 0]))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        d = build_design(ds, ["a", "b"])
    assert d.dropped == ("a",)
    assert d.column_names == ["b"]
    assert any("a" in str(w.message) for w in rec)


def test_design_rejects_missing():
    with pytest.raises(DataError, match="GB"):
        build_design(small_dataset(), ["GB"])


def test_transform_imputes_training_mean():
    ds = Dataset((FeatureColumn.numeric("x", [1.0, 2.0, 6.0]),), np.array([0, 1, 0]))
    d = build_design(ds, ["x"], standardize=False)
    other = Dataset((FeatureColumn.numeric("x", [np.nan, 5.0]),), np.array([0, 1]))
    assert d.transform(other)[:, 0].tolist() == [3.0, 5.0]
