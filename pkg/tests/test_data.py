import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gprn.data import denormalize, fit_normalization, load_csv, metrics, normalize, save_csv, split
from gprn.errors import DataError
from gprn.model import Dataset


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_two_rows(tmp_path):
    ds = load_csv(write(tmp_path, "x0,y0,y1\n1.5,2,3\n-1,4e-3,5\n"))
    assert ds.X.shape == (2, 1) and ds.Y.shape == (2, 2)
    np.testing.assert_array_equal(ds.Y, [[2.0, 3.0], [4e-3, 5.0]])


def test_nan_cell_names_row_and_column(tmp_path):
    path = write(tmp_path, "x0,y0,y1\n1,2,3\n1,NaN,3\n")
    with pytest.raises(DataError, match=r"row 3, column 2 \(y0\)"):
        load_csv(path)


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ("x0,y0\n", "no data rows"),
    ("a,y0\n1,2\n", "header column 1"),
    ("y0,x0\n1,2\n", "x"),
    ("x0,x2,y0\n1,2,3\n", "order"),
    ("x0,y0\n1,2,3\n", "row 2 has 3 fields"),
    ("x0,y0\n1,abc\n", r"row 2, column 2 \(y0\): cannot parse"),
    ("x0,y0\n1,\n", "cannot parse"),
    ("x0,y0\ninf,1\n", "non-finite"),
])
def test_malformed_files(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        load_csv(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="cannot open"):
        load_csv(tmp_path / "absent.csv")


def test_inputs_only_file(tmp_path):
    path = write(tmp_path, "x0,x1\n1,2\n3,4\n")
    with pytest.raises(DataError):
        load_csv(path)
    assert load_csv(path, require_y=False).Y.shape == (2, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_save_load_round_trip(tmp_path_factory, N, p, D, seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.standard_normal((N, p)) * 10.0 ** rng.integers(-20, 20, (N, p)),
                 rng.standard_normal((N, D)))
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    save_csv(ds, path)
    back = load_csv(path)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.Y, ds.Y)


# -- normalization ------------------------------------------------------------

def test_standardized_column_unchanged():
    x = np.array([-1.0, 1.0, -1.0, 1.0])[:, None]
    out, rec = normalize(Dataset(x, np.zeros((4, 1))))
    np.testing.assert_allclose(out.X, x, atol=1e-12)
    assert out.normalization is rec


def test_constant_column_warns_and_stays(caplog):
    X = np.column_stack([np.full(4, 3.0), np.arange(4.0)])
    with caplog.at_level(logging.WARNING):
        rec = fit_normalization(X)
    assert "zero variance" in caplog.text
    assert rec.std[0] == 1.0
    out = rec.apply(X)
    np.testing.assert_array_equal(out[:, 0], np.zeros(4))


def test_denormalize_inverts():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(5.0, 3.0, (10, 3)), rng.standard_normal((10, 2)))
    out, _ = normalize(ds)
    np.testing.assert_allclose(out.X.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.X.std(axis=0), 1.0, rtol=1e-12)
    np.testing.assert_allclose(denormalize(out).X, ds.X, rtol=1e-13)
    np.testing.assert_array_equal(out.Y, ds.Y)


def test_test_data_uses_train_record():
    rng = np.random.default_rng(1)
    train = Dataset(rng.normal(2.0, 4.0, (20, 1)), np.zeros((20, 1)))
    test = Dataset(rng.normal(2.0, 4.0, (5, 1)), np.zeros((5, 1)))
    _, rec = normalize(train)
    out, same = normalize(test, rec)
    assert same is rec
    np.testing.assert_allclose(out.X, (test.X - rec.mean) / rec.std)


def test_normalize_needs_two_rows():
    with pytest.raises(DataError):
        fit_normalization(np.ones((1, 2)))


# -- split --------------------------------------------------------------------

def _rows(n):
    return Dataset(np.arange(n, dtype=float)[:, None], np.zeros((n, 1)))


def test_split_all_train():
    tr, te = split(_rows(10), (1.0, 0), seed=0)
    assert tr.N == 10 and te.N == 0


def test_split_jura_counts():
    tr, te = split(_rows(349), (249, 100), seed=3)
    assert (tr.N, te.N) == (249, 100)
    assert not set(tr.X[:, 0]) & set(te.X[:, 0])


def test_split_reproducible_and_seed_dependent():
    a = split(_rows(50), (0.8, 0.2), seed=7)
    b = split(_rows(50), (0.8, 0.2), seed=7)
    c = split(_rows(50), (0.8, 0.2), seed=8)
    np.testing.assert_array_equal(a[0].X, b[0].X)
    assert not np.array_equal(a[0].X, c[0].X)


def test_split_infeasible():
    with pytest.raises(DataError):
        split(_rows(10), (8, 5), seed=0)
    with pytest.raises(DataError):
        split(_rows(10), (1.5, 0.0), seed=0)


# -- metrics ------------------------------------------------------------------

def test_perfect_prediction():
    Y = np.random.default_rng(0).standard_normal((5, 3))
    r = metrics(Y, Y)
    assert (r.mae, r.nrmse) == (0.0, 0.0)


def test_constant_offset():
    Y = np.random.default_rng(1).standard_normal((5, 3))
    assert metrics(Y + 0.25, Y).mae == pytest.approx(0.25, rel=1e-14)


def test_matches_reference_formulas():
    rng = np.random.default_rng(2)
    Y_test, Y_pred = rng.standard_normal((7, 3)), rng.standard_normal((7, 3))
    flat_t, flat_p = Y_test.ravel().tolist(), Y_pred.ravel().tolist()
    mae = sum(abs(a - b) for a, b in zip(flat_p, flat_t)) / len(flat_t)
    rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(flat_p, flat_t)) / len(flat_t))
    r = metrics(Y_pred, Y_test)
    assert r.mae == pytest.approx(mae, rel=1e-13)
    assert r.rmse == pytest.approx(rmse, rel=1e-13)
    assert r.nrmse == pytest.approx(rmse / (max(flat_t) - min(flat_t)), rel=1e-13)
    assert r.normalizer_kind == "range(Y_test)"
    for j in range(3):
        assert r.per_output_mae[j] == pytest.approx(np.mean(np.abs(Y_pred[:, j] - Y_test[:, j])))


def test_zero_range_flag():
    r = metrics(np.full((3, 1), 2.0), np.ones((3, 1)))
    assert r.zero_range and r.nrmse == r.rmse == 1.0 and r.normalizer == 1.0
    assert r.to_dict()["zero_range"] is True


def test_metrics_shape_mismatch():
    with pytest.raises(DataError):
        metrics(np.zeros((2, 2)), np.zeros((2, 3)))
