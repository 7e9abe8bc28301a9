import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dcst.data import NormStats, SpeedMatrix, split
from dcst.metrics import Metrics, compute_metrics, fmt, ha_baseline, ha_predict, slot_averages


def test_metric_examples():
    x = np.array([[50.0, 60.0]])
    assert compute_metrics(x, x) == Metrics(0.0, 0.0, 0.0)
    m = compute_metrics(x + 2.0, x)
    assert m.mae == 2.0 and m.rmse == 2.0
    assert compute_metrics([[1.0]], [[2.0]]).mape == 50.0


def test_mape_masks_small_truth():
    m = compute_metrics([[1.0, 5.0]], [[0.0, 4.0]])
    assert m.mape == pytest.approx(25.0)
    assert math.isnan(compute_metrics([[1.0]], [[0.0]]).mape)
    assert fmt(math.nan) == "NA"


def test_metrics_denormalize_first():
    stats = NormStats(10.0, 2.0)
    m = compute_metrics([[1.0]], [[0.0]], stats)  # 12 vs 10
    assert m.mae == 2.0 and m.mape == pytest.approx(20.0)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        compute_metrics(np.zeros((2, 3)), np.zeros((3, 2)))


pairs = st.integers(1, 6).flatmap(
    lambda n: st.tuples(arrays(np.float64, (n, 4), elements=st.floats(0, 100)),
                        arrays(np.float64, (n, 4), elements=st.floats(0, 100)),
                        st.permutations(range(n)))
)


@given(pairs)
def test_metric_invariants(p):
    pred, truth, perm = p
    m = compute_metrics(pred, truth)
    assert m.rmse >= m.mae - 1e-12 >= -1e-12
    mp = compute_metrics(pred[list(perm)], truth[list(perm)])
    assert mp.mae == pytest.approx(m.mae, abs=1e-12) and mp.rmse == pytest.approx(m.rmse, abs=1e-12)


def test_ha_exact_on_periodic_series(rng):
    day = rng.uniform(20, 60, size=(3, 24))
    values = np.tile(day, 10)
    sp = split(SpeedMatrix(values, step_minutes=60.0))
    m = ha_baseline(values, sp, 24)
    assert m.mae < 1e-12


def test_ha_on_white_noise_matches_mean_absolute_deviation(rng):
    sigma, days, slots = 2.0, 400, 24
    values = 50.0 + sigma * rng.standard_normal((4, days * slots))
    sp = split(SpeedMatrix(values, step_minutes=60.0))
    m = ha_baseline(values, sp, slots)
    # slot means carry their own error of variance sigma^2 / n_train_days
    n = len(sp.train) // slots
    expected = sigma * math.sqrt(2 / math.pi) * math.sqrt(1 + 1 / n)
    assert abs(m.mae - expected) / expected < 0.10


def test_ha_unseen_slot_falls_back_to_node_mean():
    values = np.arange(40, dtype=float).reshape(2, 20)
    table = slot_averages(values, range(0, 5), 10)  # slots 5..9 never seen
    assert np.array_equal(table[:, 5:], np.repeat(values[:, :5].mean(axis=1, keepdims=True), 5, axis=1))
    assert np.array_equal(table[:, :5], values[:, :5])


def test_ha_predict_indexes_slots():
    values = np.tile(np.arange(10, dtype=float), 4)[None, :]
    pred = ha_predict(values, range(0, 30), np.array([13]), 4, 10)
    assert pred.tolist() == [[[3.0, 4.0, 5.0, 6.0]]]


def test_ha_is_deterministic(small_synth, small_bundle):
    v = small_synth.matrix.values
    assert ha_baseline(v, small_bundle.split, 288) == ha_baseline(v, small_bundle.split, 288)


def test_eval_path_uses_train_stats_only(small_synth):
    values = small_synth.matrix.values.copy()
    sp = split(SpeedMatrix(values))
    values[:, sp.val.start :] *= 3.0
    assert split(SpeedMatrix(values)).stats == sp.stats
