import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stode.data import (
    DataError,
    Scaler,
    iterate_batches,
    load_matrix_csv,
    make_windows,
    split_chronological,
    synth_generate,
    write_synthetic,
)


def _write(tmp_path, text, name="m.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_basic(tmp_path):
    s = load_matrix_csv(_write(tmp_path, "1,2\n3,4\n"))
    np.testing.assert_array_equal(s.values, [[1, 2], [3, 4]])
    assert s.length == 2 and s.num_vars == 2


def test_load_ragged_row_reports_row(tmp_path):
    with pytest.raises(DataError, match="row 2"):
        load_matrix_csv(_write(tmp_path, "1,2\n3,4\n5\n"))


def test_load_bad_cell_reports_position(tmp_path):
    with pytest.raises(DataError, match="row 1, column 1"):  # 0-based
        load_matrix_csv(_write(tmp_path, "1,2\n3,x\n"))


def test_load_empty_file(tmp_path):
    with pytest.raises(DataError):
        load_matrix_csv(_write(tmp_path, ""))


def test_load_drops_nan_rows_with_count(tmp_path):
    s = load_matrix_csv(_write(tmp_path, "1,2\nnan,4\n5,6\n"))
    np.testing.assert_array_equal(s.values, [[1, 2], [5, 6]])
    assert s.meta["rejected_rows"] == 1
    assert not np.isnan(s.values).any()


@pytest.mark.parametrize("fracs,sizes", [((0.6, 0.2, 0.2), (6, 2, 2)), ((0.7, 0.1, 0.2), (7, 1, 2))])
def test_split_sizes(fracs, sizes):
    x = np.arange(20.0).reshape(10, 2)
    parts = split_chronological(x, fracs)
    assert tuple(len(p) for p in parts) == sizes
    np.testing.assert_array_equal(np.concatenate(parts), x)
    np.testing.assert_array_equal(parts[1], x[sizes[0]:sizes[0] + sizes[1]])


def test_split_errors():
    with pytest.raises(DataError):
        split_chronological(np.ones((10, 1)), (0.5, 0.2, 0.2))
    with pytest.raises(DataError):
        split_chronological(np.ones((3, 1)), (0.9, 0.05, 0.05))


def test_single_step_windows_example():
    x = np.arange(5.0)[:, None]
    w = make_windows(x, 2, 1, "single")
    assert len(w) == 3
    np.testing.assert_array_equal(w.inputs[0, 0, 0], [0, 1])
    assert w.targets[0, 0, 0] == 2


def test_multi_step_windows_example():
    x = np.arange(6.0)[:, None]
    w = make_windows(x, 2, 2, "multi")
    assert len(w) == 3
    np.testing.assert_array_equal(w.targets[0, 0, 0], [2, 3])


def test_short_series_gives_empty_batch_with_warning(caplog):
    w = make_windows(np.ones((3, 2)), 3, 1)
    assert len(w) == 0 and w.inputs.shape == (0, 2, 1, 3)
    assert "too short" in caplog.text


@given(st.integers(1, 20), st.integers(1, 6), st.integers(1, 4), st.sampled_from(["single", "multi"]))
def test_window_count_and_indices_by_enumeration(S, T, H, mode):
    x = np.arange(float(S))[:, None]
    w = make_windows(x, T, H, mode)
    expected = [t for t in range(S) if t + T + H <= S]
    assert list(w.starts) == expected
    for i, t in enumerate(w.starts):
        np.testing.assert_array_equal(w.inputs[i, 0, 0], np.arange(t, t + T))
        rows = [t + T + H - 1] if mode == "single" else list(range(t + T, t + T + H))
        np.testing.assert_array_equal(w.target_rows()[i], rows)
        np.testing.assert_array_equal(np.ravel(w.targets[i, 0, 0]), rows)
        assert min(rows) >= t + T  # no leakage


def test_windows_stitch_back_to_series(rng):
    x = rng.standard_normal((15, 3))
    w = make_windows(x, 4, 1)
    stitched = np.concatenate([w.inputs[0, :, 0].T, w.inputs[1:, :, 0, -1], w.targets[-1:, :, 0]])
    np.testing.assert_array_equal(stitched, x)


def test_no_leakage_across_splits():
    x = np.arange(100.0)[:, None]
    tr, va, te = split_chronological(x, (0.6, 0.2, 0.2))
    w_tr, w_te = make_windows(tr, 5, 3, "multi"), make_windows(te, 5, 3, "multi")
    assert w_tr.targets.max() < w_te.inputs.min()
    assert w_tr.targets.max() < w_te.targets.min()


@pytest.mark.parametrize("kind", ["maxabs", "zscore"])
def test_scaler_round_trip_and_train_only(kind, rng):
    tr, te = rng.standard_normal((50, 3)) * 5 + 2, rng.standard_normal((20, 3)) * 100
    s = Scaler(kind).fit(tr)
    stats = (s.shift.copy(), s.scale.copy())
    np.testing.assert_allclose(s.inverse(s.transform(te)), te, atol=1e-9)
    s.transform(te)
    np.testing.assert_array_equal(stats[0], s.shift)
    fresh = Scaler(kind).fit(tr)
    np.testing.assert_array_equal(fresh.scale, s.scale)
    assert Scaler.from_dict(s.to_dict()).to_dict() == s.to_dict()


@given(st.integers(0, 1000), st.sampled_from(["maxabs", "zscore"]))
def test_scaler_fit_is_idempotent(seed, kind):
    x = np.random.default_rng(seed).standard_normal((30, 4))
    a, b = Scaler(kind).fit(x), Scaler(kind).fit(x).fit(x)
    np.testing.assert_array_equal(a.transform(x), b.transform(x))


def test_scaler_inverse_on_variable_axis(rng):
    s = Scaler("zscore").fit(rng.standard_normal((40, 3)) * [1, 10, 100])
    y = rng.standard_normal((5, 3, 4))
    np.testing.assert_allclose(s.inverse(s.transform(y.transpose(0, 2, 1)).transpose(0, 2, 1), axis=1), y)


def test_scaler_errors():
    with pytest.raises(DataError):
        Scaler("minmax")
    with pytest.raises(DataError):
        Scaler().transform(np.ones((2, 2)))


def test_synthetic_deterministic_chain():
    lag = 3
    s, edges = synth_generate(4, 60, lag=lag, noise=0.0, seed=1, coupling=1.0, own=0.0)
    x = s.values
    for i in range(1, 4):
        np.testing.assert_allclose(x[i * lag:, i], x[:60 - i * lag, 0], atol=1e-12)
    assert edges == [(0, 1), (1, 2), (2, 3)]


def test_synthetic_same_seed_identical():
    a, _ = synth_generate(5, 300, seed=7)
    b, _ = synth_generate(5, 300, seed=7)
    np.testing.assert_array_equal(a.values, b.values)
    with pytest.raises(DataError):
        synth_generate(1, 10)


def test_synthetic_adjacent_pairs_correlate_most():
    s, edges = synth_generate(5, 2000, lag=1, seed=7)
    x = s.values

    def lagged_corr(i, j):
        return abs(np.corrcoef(x[:-1, i], x[1:, j])[0, 1])

    adjacent = [lagged_corr(i, j) for i, j in edges]
    others = [lagged_corr(i, j) for i in range(5) for j in range(5) if j not in (i, i + 1)]
    assert min(adjacent) > max(others)


def test_write_synthetic_files(tmp_path):
    csv_path, edges_path = write_synthetic(tmp_path, 5, 2000, seed=7)
    m = load_matrix_csv(csv_path)
    assert m.values.shape == (2000, 5)
    doc = json.loads(edges_path.read_text())
    assert doc["edges"] == [[0, 1], [1, 2], [2, 3], [3, 4]]
    first = csv_path.read_bytes()
    write_synthetic(tmp_path, 5, 2000, seed=7)
    assert csv_path.read_bytes() == first


def test_iterate_batches_order(rng):
    w = make_windows(np.arange(30.0)[:, None], 3, 1)
    plain = np.concatenate([b.starts for b in iterate_batches(w, 8)])
    np.testing.assert_array_equal(plain, w.starts)
    a = np.concatenate([b.starts for b in iterate_batches(w, 8, np.random.default_rng(5))])
    b = np.concatenate([b.starts for b in iterate_batches(w, 8, np.random.default_rng(5))])
    np.testing.assert_array_equal(a, b)
    assert sorted(a) == list(w.starts)
