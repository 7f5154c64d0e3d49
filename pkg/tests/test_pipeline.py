from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npkink.core import Dataset, ValidationError
from npkink.estimator import ThresholdContour
from npkink.pipeline import (
    CleaningSpec,
    LoadError,
    Schema,
    clean,
    heatmap,
    load_csv,
    quantile_ranks,
    read_table,
)
from npkink.simulation import true_threshold

SCHEMA = Schema(outcome="profit", running="sales", shifter="cost", covariates=("age",))


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "profit,sales,cost,age\n1,2,3,4\n5,6,7,8\n9,10,11,12\n")
    d = load_csv(p, SCHEMA)
    assert d.n == 3
    assert d.covariate_names == ("const", "age")
    np.testing.assert_array_equal(d.covariates[:, 0], 1.0)


def test_load_missing_outcome_column(tmp_path):
    p = write(tmp_path, "sales,cost,age\n1,2,3\n")
    with pytest.raises(LoadError) as ei:
        load_csv(p, SCHEMA)
    assert "profit" in str(ei.value) and ei.value.column == "profit"


def test_load_nan_cell_names_row_and_column(tmp_path):
    p = write(tmp_path, "profit,sales,cost,age\n1,2,3,4\nNaN,6,7,8\n")
    with pytest.raises(LoadError) as ei:
        load_csv(p, SCHEMA)
    assert ei.value.row == 2 and ei.value.column == "profit"
    assert "row 2" in str(ei.value) and "'profit'" in str(ei.value)


@pytest.mark.parametrize("cell", ["", "abc", "inf"])
def test_load_bad_cells(tmp_path, cell):
    p = write(tmp_path, f"profit,sales,cost,age\n1,2,3,4\n2,{cell},7,8\n")
    with pytest.raises(LoadError) as ei:
        load_csv(p, SCHEMA)
    assert (ei.value.row, ei.value.column) == (2, "sales")


def test_load_delimiter(tmp_path):
    p = write(tmp_path, "profit;sales;cost;age\n1;2;3;4\n")
    d = load_csv(p, Schema(outcome="profit", running="sales", shifter="cost", covariates=("age",), delimiter=";"))
    assert d.n == 1


def frame(n=100, seed=0):
    rng = np.random.default_rng(seed)
    return pd.DataFrame({
        "outcome": rng.permutation(n).astype(float) + 1.0,
        "a": rng.normal(5, 3, size=n),
        "b": rng.normal(size=n),
        "cap": rng.choice([0.0, 1.0, 2.0], size=n),
    })


def test_trim_count():
    out, rep = clean(frame(), CleaningSpec(trim_upper_fraction=0.15))
    assert len(out) == 85 and rep.dropped_trim == 15
    assert out["outcome"].max() == 85


def test_trim_ties_at_cutoff_dropped():
    f = pd.DataFrame({"outcome": [1.0, 2, 3, 4, 5, 6, 7, 8, 9, 9]})
    out, rep = clean(f, CleaningSpec(trim_upper_fraction=0.1))
    assert len(out) == 8 and rep.dropped_trim == 2


def test_standardize_exact():
    out, _ = clean(frame(), CleaningSpec(trim_upper_fraction=0.0, standardize=("a",)))
    assert abs(out["a"].mean()) <= 1e-12
    assert abs(out["a"].std(ddof=1) - 1) <= 1e-12


def test_quantile_transform_convention():
    np.testing.assert_allclose(quantile_ranks([10, 20, 30]), [1 / 3, 2 / 3, 1])
    np.testing.assert_allclose(quantile_ranks([5, 5, 1, 9]), [2.5 / 4, 2.5 / 4, 1 / 4, 1])


def test_positivity_and_nonnegative_report():
    f = frame()
    f.loc[:4, "a"] = -1.0
    out, rep = clean(f, CleaningSpec(require_positive=("a",), require_nonnegative=("cap",), trim_upper_fraction=0.0))
    assert rep.dropped_positive["a"] == int((f["a"] <= 0).sum())
    assert rep.zeros_kept["cap"] == int(((f["cap"] == 0) & (f["a"] > 0)).sum())
    assert (out["a"] > 0).all()


def test_order_positivity_then_trim_then_standardize():
    f = frame()
    f["a"] = f["a"].abs() + 1.0
    f.loc[f["outcome"] > 90, "a"] = -1.0  # the ten largest outcomes fail positivity
    spec = CleaningSpec(require_positive=("a",), trim_upper_fraction=0.1, standardize=("b",))
    out, rep = clean(f, spec)
    assert rep.dropped_positive["a"] == 10
    assert rep.dropped_trim == 9  # 10% of the 90 survivors
    assert out["outcome"].max() == 81
    assert abs(out["b"].mean()) <= 1e-12


def test_clean_everything_dropped():
    f = frame()
    f["neg"] = -1.0
    with pytest.raises(ValidationError, match="every row"):
        clean(f, CleaningSpec(require_positive=("neg",), trim_upper_fraction=0.0))


def test_clean_unknown_and_invalid():
    with pytest.raises(ValidationError):
        clean(frame(), CleaningSpec(require_positive=("zzz",)))
    with pytest.raises(ValidationError):
        clean(frame(), CleaningSpec(trim_upper_fraction=1.0))


@given(st.integers(0, 1000), st.floats(0.0, 0.5))
def test_clean_idempotent(seed, trim):
    spec = CleaningSpec(require_positive=("a",), trim_upper_fraction=trim, standardize=("b",))
    once, _ = clean(frame(seed=seed), spec)
    twice, rep = clean(once, CleaningSpec(require_positive=("a",), trim_upper_fraction=0.0, standardize=("b",)))
    assert rep.n_output == len(once)
    np.testing.assert_allclose(twice["b"], once["b"], atol=1e-12)
    np.testing.assert_array_equal(twice["a"], once["a"])


def test_clean_dataset_roundtrip():
    rng = np.random.default_rng(0)
    n = 40
    d = Dataset(rng.permutation(n) + 1.0, rng.normal(size=n), rng.normal(size=n),
                np.column_stack([np.ones(n), rng.normal(size=n)]))
    out, rep = clean(d, CleaningSpec(trim_upper_fraction=0.25, standardize=("running",)))
    assert isinstance(out, Dataset) and out.n == 30
    assert out.covariate_names == d.covariate_names
    assert abs(out.running.mean()) < 1e-12


def contour(points, gammas):
    points = np.asarray(points, float)
    return ThresholdContour(points, np.asarray(gammas, float), 0.1, np.ones(0), np.ones(points.size),
                            np.linspace(-1, 1, 3))


def test_heatmap_corners():
    m = np.array([0.0, 0.0, 1.0, 1.0])
    g = np.array([0.0, 1.0, 0.0, 1.0])
    d = Dataset(np.zeros(4), g, m, np.ones((4, 1)), export_flag=[1, 0, 1, 0])
    edges = np.linspace(0.1, 0.9, 9)
    hm = heatmap(d, contour([], []), m_edges=edges, g_edges=edges)
    assert hm.cell_fractions[0, 0] == 1 and hm.cell_fractions[0, 9] == 0
    assert hm.cell_fractions[9, 0] == 1 and hm.cell_fractions[9, 9] == 0
    assert np.isnan(hm.cell_fractions).sum() == 96


def test_heatmap_edge_goes_to_lower_cell():
    d = Dataset(np.zeros(1), [0.5], [0.5], np.ones((1, 1)), export_flag=[1])
    edges = np.linspace(0.1, 0.9, 9)
    hm = heatmap(d, contour([], []), m_edges=edges, g_edges=edges)
    assert hm.counts[4, 4] == 1


def test_heatmap_all_exporters_and_mass():
    rng = np.random.default_rng(0)
    n = 500
    d = Dataset(np.zeros(n), rng.normal(size=n), rng.normal(size=n), np.ones((n, 1)), export_flag=np.ones(n))
    hm = heatmap(d, contour([0.0], [0.1]))
    occ = hm.counts > 0
    assert np.all(hm.cell_fractions[occ] == 1.0)
    assert np.all(np.isnan(hm.cell_fractions[~occ]))
    assert hm.counts.sum() == n


def test_heatmap_separable():
    rng = np.random.default_rng(1)
    n = 20000
    g, m = rng.normal(size=n), rng.normal(size=n)
    flag = (g > true_threshold(m)).astype(float)
    d = Dataset(np.zeros(n), g, m, np.ones((n, 1)), export_flag=flag)
    qs = np.linspace(m.min(), m.max(), 400)
    hm = heatmap(d, contour(qs, true_threshold(qs)))
    me = np.r_[-np.inf, hm.m_edges, np.inf]
    ge = np.r_[-np.inf, hm.g_edges, np.inf]
    for i in range(10):
        lo, hi = true_threshold(np.clip([me[i], me[i + 1]], m.min(), m.max()))
        for j in range(10):
            if hm.counts[i, j] == 0:
                continue
            if ge[j] >= hi:
                assert hm.cell_fractions[i, j] == 1.0
            elif ge[j + 1] <= lo:
                assert hm.cell_fractions[i, j] == 0.0
    assert np.all(np.diff(hm.overlay_m_percentile) >= 0)


def test_heatmap_needs_flag():
    d = Dataset(np.zeros(3), np.zeros(3), np.zeros(3), np.ones((3, 1)))
    with pytest.raises(ValidationError):
        heatmap(d, contour([], []))


def test_read_table_returns_float_frame(tmp_path):
    p = write(tmp_path, "profit,sales,cost,age,extra\n1,2,3,4,x\n")
    f = read_table(p, SCHEMA)
    assert list(f.columns) == ["profit", "sales", "cost", "age"]
    assert (f.dtypes == float).all()
