import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stode.metrics import MetricError, MetricReport, multi_step_metrics, single_step_metrics

seeds = st.integers(0, 10_000)


def test_perfect_prediction(rng):
    y = rng.standard_normal((10, 3))
    rse, corr = single_step_metrics(y, y)
    assert rse == 0.0 and corr == pytest.approx(1.0, abs=1e-12)
    assert multi_step_metrics(y + 5, y + 5) == (0.0, 0.0, 0.0)


def test_mean_prediction_rse_is_one(rng):
    y = rng.standard_normal((10, 3))
    assert single_step_metrics(np.full_like(y, y.mean()), y)[0] == pytest.approx(1.0, abs=1e-12)


def test_single_step_hand_values():
    rse, corr = single_step_metrics([[1.1], [2.1], [3.1]], [[1.0], [2.0], [3.0]])
    assert abs(rse - 0.1224744871391589) <= 1e-9
    assert abs(corr - 1.0) <= 1e-9


def test_multi_step_hand_values():
    mae, rmse, mape = multi_step_metrics([1.0, 6.0], [2.0, 4.0])
    assert abs(mae - 1.5) <= 1e-9
    assert abs(rmse - 1.5811388300841898) <= 1e-9
    assert abs(mape - 50.0) <= 1e-9


def test_zero_truth_masking_contract():
    # threshold 0 drops the zero-truth cell from every metric
    assert multi_step_metrics([1.0, 4.0], [0.0, 4.0], 0.0) == (0.0, 0.0, 0.0)
    # no masking: MAE/RMSE see the cell, MAPE guards the division by skipping it
    mae, rmse, mape = multi_step_metrics([1.0, 4.0], [0.0, 4.0], None)
    assert mae == 0.5 and rmse == pytest.approx(math.sqrt(0.5)) and mape == 0.0


def test_metric_errors():
    with pytest.raises(MetricError):
        single_step_metrics(np.ones((3, 2)), np.ones((3, 3)))
    with pytest.raises(MetricError):
        single_step_metrics(np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(MetricError):
        single_step_metrics(np.ones((4, 2)), np.tile([1.0, 2.0], (4, 1)))
    with pytest.raises(MetricError):
        multi_step_metrics([1.0, 2.0], [0.0, 0.0])


def test_corr_skips_zero_variance_variables():
    truth = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    pred = np.array([[1.0, 4.0], [2.5, 4.0], [2.9, 4.0]])
    _, corr = single_step_metrics(pred, truth)
    assert corr == pytest.approx(np.corrcoef(pred[:, 0], truth[:, 0])[0, 1])


@given(seeds, st.floats(0.01, 100.0))
def test_rse_scale_invariance(seed, c):
    r = np.random.default_rng(seed)
    y, p = r.standard_normal((8, 3)), r.standard_normal((8, 3))
    assert single_step_metrics(c * p, c * y)[0] == pytest.approx(single_step_metrics(p, y)[0], rel=1e-9)


@given(seeds, st.floats(0.01, 10.0), st.floats(-10, 10))
def test_corr_affine_invariance(seed, a, b):
    r = np.random.default_rng(seed)
    y, p = r.standard_normal((8, 3)), r.standard_normal((8, 3))
    assert single_step_metrics(a * p + b, y)[1] == pytest.approx(single_step_metrics(p, y)[1], abs=1e-9)


@given(seeds)
def test_metric_ranges(seed):
    r = np.random.default_rng(seed)
    y, p = r.standard_normal((8, 4)), r.standard_normal((8, 4))
    rse, corr = single_step_metrics(p, y)
    mae, rmse, mape = multi_step_metrics(p, y)
    assert rse >= 0 and -1 <= corr <= 1
    assert mae >= 0 and mape >= 0 and rmse >= mae - 1e-15


def test_report_serialisation():
    rep = MetricReport("multi", variant="no_gsl")
    rep.add(3, (1.0, 2.0, 3.0), 10)
    rep.add(12, (1.5, 2.5, 3.5), 10)
    again = MetricReport.from_dict(json.loads(rep.to_json()))
    assert again.rows == rep.rows and again.variant == "no_gsl"
    lines = rep.to_csv().splitlines()
    assert lines[0] == "variant,protocol,horizon,mae,rmse,mape,count"
    assert lines[1].startswith("no_gsl,multi,3,")
