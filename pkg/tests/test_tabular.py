import numpy as np
import pytest

from misscomp.tabular import (Column, Dataset, ParseError, SchemaError,
                              complete_case_filter, design_matrix,
                              design_matrix_labeled, load_table, write_table)

SCHEMA = [Column("y", "binary"), Column("x", "continuous"), Column("w1", "continuous")]


def _write(tmp_path, text, name="t.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_table_masks_na_cells(tmp_path):
    path = _write(tmp_path, "y,x,w1\n1,0.5,2.0\n0,1.5,NA\n1,-1.0,3.5\n")
    d = load_table(path, SCHEMA)
    assert d.n_rows == 3
    assert d.mask_of("w1").sum() == 1
    assert d.mask_of("x").sum() == 0
    assert d.column("x")[1] == 1.5


def test_load_table_empty_body(tmp_path):
    d = load_table(_write(tmp_path, "y,x,w1\n"), SCHEMA)
    assert d.n_rows == 0


def test_load_table_missing_declared_column(tmp_path):
    with pytest.raises(SchemaError, match="w1"):
        load_table(_write(tmp_path, "y,x\n1,0.5\n"), SCHEMA)


def test_load_table_ragged_row_reports_row_number(tmp_path):
    with pytest.raises(ParseError, match="row 3"):
        load_table(_write(tmp_path, "y,x,w1\n1,0.5,2.0\n0,1.5\n"), SCHEMA)


def test_load_table_non_numeric_cell(tmp_path):
    with pytest.raises(ParseError, match="x"):
        load_table(_write(tmp_path, "y,x,w1\n1,abc,2.0\n"), SCHEMA)


def test_write_load_round_trip_bytes(tmp_path):
    d = Dataset.build([
        (Column("y", "binary"), [1, 0, 1]),
        (Column("x", "continuous"), [0.1, -2.25, 1 / 3]),
        (Column("g", "categorical", ("a", "b")), [0, 1, 0], [False, False, True]),
    ])
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_table(d, p1)
    write_table(load_table(p1, d.columns), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_dataset_rejects_non_binary_cells():
    with pytest.raises(SchemaError):
        Dataset.build([(Column("y", "binary"), [0, 2])])


def test_dataset_rejects_bad_level_index():
    with pytest.raises(SchemaError):
        Dataset.build([(Column("g", "categorical", ("a", "b")), [0, 5])])


def test_dataset_values_immutable():
    d = Dataset.build([(Column("x", "continuous"), [1.0, 2.0])])
    with pytest.raises(ValueError):
        d.values[0, 0] = 9.0


# -- complete cases --------------------------------------------------------


def _with_indicator(r):
    n = len(r)
    return Dataset.build([
        (Column("r", "binary"), r),
        (Column("w", "continuous"), np.arange(n, dtype=float), np.asarray(r) == 0),
    ])


def test_complete_case_filter_identity_when_all_selected():
    d = _with_indicator([1, 1, 1])
    out = complete_case_filter(d, "r")
    assert out.n_rows == 3
    np.testing.assert_array_equal(out.values, d.values)


def test_complete_case_filter_empty_when_none_selected():
    assert complete_case_filter(_with_indicator([0] * 4), "r").n_rows == 0


def test_complete_case_filter_counts_and_clears_masks():
    d = _with_indicator([1, 0, 1, 1, 0, 1, 1, 0, 1, 0])
    out = complete_case_filter(d, "r")
    assert out.n_rows == 6
    assert not out.mask.any()


def test_complete_case_filter_idempotent():
    d = _with_indicator([1, 0, 1])
    once = complete_case_filter(d, "r")
    twice = complete_case_filter(once, "r")
    np.testing.assert_array_equal(once.values, twice.values)


def test_complete_case_filter_requires_binary_indicator():
    d = Dataset.build([(Column("r", "continuous"), [0.5, 1.0])])
    with pytest.raises(SchemaError):
        complete_case_filter(d, "r")


# -- design matrices ---------------------------------------------------------


def test_design_matrix_main_effect():
    d = Dataset.build([(Column("x", "continuous"), [0.0, 1.0])])
    np.testing.assert_array_equal(design_matrix(d, ["x"]), [[1, 0], [1, 1]])


def test_design_matrix_threshold_indicator():
    d = Dataset.build([(Column("z1", "continuous"), [0.5, 2.0])])
    np.testing.assert_array_equal(design_matrix(d, ["z1", "I(z1>1)"]),
                                  [[1, 0.5, 0], [1, 2, 1]])


def test_design_matrix_product_term():
    d = Dataset.build([(Column("z1", "continuous"), [2.0, 3.0]),
                       (Column("z2", "continuous"), [1.0, -1.0])])
    np.testing.assert_array_equal(design_matrix(d, ["z1*z2"])[:, 1], [2.0, -3.0])


def test_design_matrix_errors_on_masked_referenced_column():
    d = Dataset.build([(Column("x", "continuous"), [1.0, 2.0], [False, True])])
    with pytest.raises(ValueError, match="missing"):
        design_matrix(d, ["x"])


def test_design_matrix_ignores_unreferenced_masked_columns():
    d = Dataset.build([
        (Column("x", "continuous"), [1.0, 2.0]),
        (Column("w", "continuous"), [0.0, 0.0], [True, True]),
    ])
    np.testing.assert_array_equal(design_matrix(d, ["x"])[:, 1], [1.0, 2.0])


def test_design_matrix_reference_codes_categoricals():
    d = Dataset.build([(Column("g", "categorical", ("a", "b", "c")), [0, 1, 2])])
    mat, labels = design_matrix_labeled(d, ["g"])
    assert labels == ["(intercept)", "g[b]", "g[c]"]
    np.testing.assert_array_equal(mat[:, 1:], [[0, 0], [1, 0], [0, 1]])


def test_design_matrix_categorical_interaction_distributes():
    d = Dataset.build([(Column("g", "categorical", ("a", "b")), [0, 1, 1]),
                       (Column("x", "continuous"), [2.0, 3.0, 4.0])])
    mat, labels = design_matrix_labeled(d, ["g*x"])
    assert labels == ["(intercept)", "g[b]*x"]
    np.testing.assert_array_equal(mat[:, 1], [0.0, 3.0, 4.0])
