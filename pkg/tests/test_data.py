import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcst.data import (
    IngestionError,
    NormStats,
    SensorMeta,
    SpeedMatrix,
    denormalize,
    impute,
    load_csv,
    normalize,
    prepare,
    save_csv,
    split,
    window,
)


def _write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def csv_files(tmp_path):
    speeds = _write(tmp_path / "speeds.csv", "timestamp,a,b\n2024-01-01T00:00,60,50\n2024-01-01T00:05,61,51\n2024-01-01T00:10,62,52\n")
    sensors = _write(tmp_path / "sensors.csv", "id,x,y\na,0,0\nb,1,1\n")
    adj = _write(tmp_path / "adj.csv", "src,dst,weight\na,b,1.0\n")
    return speeds, sensors, adj


def test_load_csv_shapes_and_symmetric_adjacency(csv_files):
    matrix, sensors, graph = load_csv(*csv_files)
    assert matrix.values.shape == (2, 3)
    assert [s.id for s in sensors] == ["a", "b"]
    assert np.count_nonzero(graph.adjacency) == 2
    assert graph.adjacency[0, 1] == graph.adjacency[1, 0] == 1.0
    assert matrix.timestamps[0] == "2024-01-01T00:00"


def test_load_csv_column_order_follows_sensor_file(tmp_path, csv_files):
    _, _, adj = csv_files
    speeds = _write(tmp_path / "s2.csv", "timestamp,b,a\nt0,50,60\n")
    sensors = _write(tmp_path / "n2.csv", "id,x,y\na,0,0\nb,1,1\n")
    matrix, _, _ = load_csv(speeds, sensors, adj)
    assert np.array_equal(matrix.values[:, 0], [60.0, 50.0])


def test_load_csv_imputes_gaps(tmp_path, csv_files):
    _, sensors, adj = csv_files
    speeds = _write(tmp_path / "gaps.csv", "timestamp,a,b\nt0,,50\nt1,10,\nt2,20,52\nt3,,53\n")
    matrix, _, _ = load_csv(speeds, sensors, adj)
    # hand-derived: a leads with a gap -> mean(10, 20) = 15; trailing gap -> previous value 20
    assert np.array_equal(matrix.values[0], [15.0, 10.0, 20.0, 20.0])
    assert np.array_equal(matrix.values[1], [50.0, 50.0, 52.0, 53.0])


def test_load_csv_unknown_sensor_in_adjacency(tmp_path, csv_files):
    speeds, sensors, _ = csv_files
    adj = _write(tmp_path / "bad_adj.csv", "src,dst,weight\na,zz,1.0\n")
    with pytest.raises(IngestionError, match="zz"):
        load_csv(speeds, sensors, adj)


def test_load_csv_non_numeric_cell_reports_row_and_column(tmp_path, csv_files):
    _, sensors, adj = csv_files
    speeds = _write(tmp_path / "bad.csv", "timestamp,a,b\nt0,60,50\nt1,61,fast\n")
    with pytest.raises(IngestionError, match=r"row 3 column 'b'"):
        load_csv(speeds, sensors, adj)


def test_impute_rejects_empty_row():
    with pytest.raises(IngestionError):
        impute(np.array([[np.nan, np.nan]]))


def test_csv_round_trip_is_exact(tmp_path, small_synth):
    ds = small_synth
    paths = save_csv(tmp_path, ds.matrix, ds.sensors, ds.graph)
    matrix, sensors, graph = load_csv(paths["speeds"], paths["sensors"], paths["adjacency"])
    assert np.array_equal(matrix.values, ds.matrix.values)
    assert sensors == ds.sensors
    assert np.array_equal(graph.adjacency, ds.graph.adjacency)


# ------------------------------------------------------------------ split


@pytest.mark.parametrize("t_total,sizes", [(1000, (700, 200, 100)), (10, (7, 2, 1))])
def test_split_sizes(t_total, sizes):
    sp = split(SpeedMatrix(np.arange(t_total, dtype=float)[None, :]))
    assert (len(sp.train), len(sp.val), len(sp.test)) == sizes


def test_split_constant_train_floors_std():
    values = np.concatenate([np.full(70, 5.0), np.arange(30.0)])[None, :]
    assert split(SpeedMatrix(values)).stats.std == 1e-6


@given(st.integers(10, 5000))
def test_split_ranges_partition_time(t_total):
    sp = split(SpeedMatrix(np.zeros((1, t_total))))
    assert sp.train.start == 0 and sp.train.stop == sp.val.start and sp.val.stop == sp.test.start
    assert sp.test.stop == t_total


def test_split_stats_ignore_val_and_test(rng):
    values = rng.standard_normal((3, 200))
    base = split(SpeedMatrix(values)).stats
    values[:, 140:] += 1e6
    assert split(SpeedMatrix(values)).stats == base


# ------------------------------------------------------------------ windows


@pytest.mark.parametrize("length,count", [(100, 77), (24, 1), (23, 0)])
def test_window_counts(length, count):
    w = window(np.zeros((2, 200)), range(50, 50 + length))
    assert len(w) == count
    assert bool(w.warnings) == (count == 0)


def test_window_short_range_logs_warning(caplog):
    with caplog.at_level(logging.WARNING):
        w = window(np.zeros((2, 30)), range(0, 10))
    assert w.inputs.shape == (0, 2, 12)
    assert "shorter" in caplog.text


def test_window_columns():
    values = np.arange(3 * 60, dtype=float).reshape(3, 60)
    w = window(values, range(5, 55))
    t = int(w.origins[4])
    assert np.array_equal(w.inputs[4], values[:, t - 12 : t])
    assert np.array_equal(w.targets[4], values[:, t : t + 12])


def test_windows_stay_inside_their_range(small_bundle):
    b = small_bundle
    for w, r in ((b.train, b.split.train), (b.val, b.split.val), (b.test, b.split.test)):
        assert w.origins.min() - 12 >= r.start
        assert w.origins.max() + 12 <= r.stop


# ------------------------------------------------------------------ normalization


def test_normalize_examples(rng):
    stats = NormStats(4.0, 2.0)
    assert np.array_equal(normalize([4.0, 4.0], stats), [0.0, 0.0])
    x = rng.normal(50, 10, size=100)
    assert np.max(np.abs(denormalize(normalize(x, stats), stats) - x)) < 1e-10


def test_normalized_train_moments(small_bundle):
    b = small_bundle
    z = normalize(b.matrix.values[:, b.split.train.start : b.split.train.stop], b.stats)
    assert abs(z.mean()) < 1e-10
    assert abs(z.std() - 1.0) < 1e-10


def test_prepare_mean_horizon_mode(small_synth):
    ds = small_synth
    per = prepare(ds.matrix, ds.sensors, ds.graph)
    mean = prepare(ds.matrix, ds.sensors, ds.graph, horizon_mode="mean")
    assert mean.test.targets.shape[-1] == 1
    assert np.allclose(mean.test.targets[..., 0], per.test.targets.mean(axis=-1))
    with pytest.raises(ValueError):
        prepare(ds.matrix, ds.sensors, ds.graph, horizon_mode="median")


def test_sensor_meta_is_hashable_record():
    assert SensorMeta("a", 1.0, 2.0) == SensorMeta("a", 1.0, 2.0)
