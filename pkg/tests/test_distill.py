import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dcst.diffcore import ConfigError, DimensionError, Parameter, Tape, Tensor, backward, mae, ops
from dcst.distill import (
    SWEEP_COLUMNS,
    SWEEP_PAIRS,
    DistillConfig,
    best_entry,
    evaluate,
    distill_loss,
    sweep,
    train_student,
    write_sweep_csv,
)
from dcst.model import DcstConfig, DcstModel
from dcst.teacher import GnnConfig, GnnModel, freeze, pretrain
from dcst.training import TrainingDiverged, TrainSettings, fit

TINY_DCST = DcstConfig(d_model=4, heads=2, d_ff=8)
FAST = dict(epochs=2, batch_size=64)

vec = arrays(np.float64, (3, 4), elements=st.floats(-50, 50))
weight = st.floats(0, 3)


@pytest.fixture(scope="module")
def teacher(small_bundle):
    b = small_bundle
    model = GnnModel(GnnConfig(hidden=4, blocks=1), b.graph, seed=0)
    pretrain(model, b.train, b.val, b.stats, TrainSettings(lr=3e-3, epochs=4, batch_size=32))
    return freeze(model)


# ------------------------------------------------------------------ loss algebra


@given(vec)
def test_loss_zero_at_agreement(y):
    assert distill_loss(y, y, y, 0.3, 0.7).item() == 0.0


@given(vec, vec, vec)
def test_alpha_zero_is_hard_only(s, t, y):
    assert abs(distill_loss(s, t, y, 0.0, 1.0).item() - mae(Tensor(s), y).item()) <= 1e-12


@given(vec, st.floats(-20, 20), vec)
def test_translation_gives_abs_offset(t, c, y):
    assert abs(distill_loss(t + c, t, y, 1.0, 0.0).item() - abs(c)) <= 1e-12


@given(vec, vec, vec, weight, weight)
def test_loss_linear_in_weights(s, t, y, a, b):
    one = distill_loss(s, t, y, a, b).item()
    assert distill_loss(s, t, y, 2 * a, 2 * b).item() == pytest.approx(2 * one, abs=1e-9)


def test_gradient_flows_to_student_only(rng):
    s = Parameter(rng.standard_normal((3, 4)))
    t = Parameter(rng.standard_normal((3, 4)))
    with Tape() as tape:
        loss = distill_loss(s, t, rng.standard_normal((3, 4)), 0.5, 0.5)
    backward(tape, loss)
    assert np.any(s.grad != 0)
    assert np.array_equal(t.grad, np.zeros((3, 4)))


def test_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        distill_loss(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((3, 2)), 0.5, 0.5)


def test_mse_switch(rng):
    s, t, y = (rng.standard_normal((2, 3)) for _ in range(3))
    want = 0.4 * np.mean((s - t) ** 2) + 0.6 * np.mean((s - y) ** 2)
    assert distill_loss(s, t, y, 0.4, 0.6, loss="mse").item() == pytest.approx(want, abs=1e-12)


# ------------------------------------------------------------------ config


@pytest.mark.parametrize("bad", [dict(alpha=-0.1), dict(alpha=0.0, beta=0.0), dict(loss="huber"), dict(epochs=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        DistillConfig(**bad).validate()


def test_requires_frozen_teacher(small_bundle):
    student = DcstModel(TINY_DCST, small_bundle.sensors)
    with pytest.raises(ConfigError):
        train_student(student, None, small_bundle, DistillConfig(alpha=0.5, beta=0.5, **FAST))
    live = GnnModel(GnnConfig(hidden=4, blocks=1), small_bundle.graph)
    with pytest.raises(ConfigError):
        train_student(student, live, small_bundle, DistillConfig(alpha=0.5, beta=0.5, **FAST))


# ------------------------------------------------------------------ training


def test_report_invariants_and_determinism(small_bundle, teacher):
    reports, outs = [], []
    for _ in range(2):
        student = DcstModel(TINY_DCST, small_bundle.sensors, seed=1)
        reports.append(train_student(student, teacher, small_bundle, DistillConfig(alpha=0.5, beta=0.5, epochs=3, batch_size=64)))
        outs.append(student.forward(small_bundle.test.inputs[:3]).data)
    r = reports[0]
    assert r.epochs_run == 3 and not r.stopped_early
    assert len({len(v) for v in (r.train_loss, r.soft_loss, r.hard_loss, r.val_mae, r.val_rmse, r.val_mape)}) == 1
    assert 0 <= r.best_epoch < 3
    assert reports[0].to_dict(with_time=False) == reports[1].to_dict(with_time=False)
    assert np.array_equal(outs[0], outs[1])


def test_alpha_zero_equals_plain_supervised_training(small_bundle, teacher):
    settings = dict(lr=2e-3, epochs=2, batch_size=64, seed=3)
    a = DcstModel(TINY_DCST, small_bundle.sensors, seed=5)
    ra = train_student(a, teacher, small_bundle, DistillConfig(alpha=0.0, beta=1.0, **settings))
    b = DcstModel(TINY_DCST, small_bundle.sensors, seed=5)

    def plain(pred, xb, yb):
        loss = mae(pred, yb)
        return loss, {"hard": loss.item()}

    rb = fit(b.parameters(), b.forward, plain, small_bundle.train, small_bundle.val, small_bundle.stats,
             TrainSettings(**settings))
    assert ra.train_loss == rb.train_loss
    assert ra.val_mae == rb.val_mae
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    assert all(s > 0 for s in ra.soft_loss)  # still reported for inspection


def test_early_stopping_keeps_best(small_bundle):
    student = DcstModel(TINY_DCST, small_bundle.sensors)
    r = train_student(student, None, small_bundle, DistillConfig(alpha=0.0, beta=1.0, lr=0.5, epochs=8, batch_size=64, patience=1))
    assert r.stopped_early == (r.epochs_run < 8)
    assert evaluate(student, small_bundle, "val").mae == pytest.approx(r.val_mae[r.best_epoch], abs=1e-12)


def test_nan_loss_aborts_with_last_good_parameters(small_bundle):
    student = DcstModel(TINY_DCST, small_bundle.sensors)
    calls = {"n": 0}
    n_batches = math.ceil(len(small_bundle.train) / 64)

    def poisoned(pred, xb, yb):
        calls["n"] += 1
        loss = mae(pred, yb)
        if calls["n"] > n_batches:  # second epoch
            loss = ops.mul(loss, Tensor(np.nan, _check=False))
        return loss, {}

    with pytest.raises(TrainingDiverged) as info:
        fit(student.parameters(), student.forward, poisoned, small_bundle.train, small_bundle.val,
            small_bundle.stats, TrainSettings(epochs=3, batch_size=64))
    assert info.value.report.best_epoch == 0
    assert all(np.all(np.isfinite(p.data)) for p in student.parameters())
    assert evaluate(student, small_bundle, "val").mae == pytest.approx(info.value.report.val_mae[0], abs=1e-12)


def test_soft_loss_decreases_when_only_imitating(small_bundle, teacher):
    student = DcstModel(TINY_DCST, small_bundle.sensors)
    r = train_student(student, teacher, small_bundle, DistillConfig(alpha=1.0, beta=0.0, lr=3e-3, epochs=4, batch_size=32))
    assert r.best_epoch > 0
    assert r.soft_loss[r.best_epoch] < r.soft_loss[0]


# ------------------------------------------------------------------ sweep


def test_sweep_pairs_and_table(tmp_path, small_bundle, teacher):
    entries = sweep(lambda: DcstModel(TINY_DCST, small_bundle.sensors, seed=0), teacher, small_bundle,
                    DistillConfig(epochs=1, batch_size=64))
    assert [(e.alpha, e.beta) for e in entries] == list(SWEEP_PAIRS)
    assert all(abs(e.alpha + e.beta - 1) < 1e-12 for e in entries)
    for e in entries:
        e.report.check()
    path = write_sweep_csv(entries, tmp_path / "sweep.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == SWEEP_COLUMNS
    assert len(rows) == 6 and all(len(r) == 8 and "" not in r for r in rows)
    assert best_entry(entries) in entries


def test_sweep_rejects_unnormalized_pairs(small_bundle, teacher):
    with pytest.raises(ConfigError):
        sweep(lambda: DcstModel(TINY_DCST, small_bundle.sensors), teacher, small_bundle,
              DistillConfig(epochs=1), pairs=[(0.5, 0.6)])
