"""Minibatch training loop shared by teacher pre-training and distillation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import NormStats, Windows
from .diffcore import Adam, AdamConfig, Parameter, Tape, Tensor, backward, seeded_rng
from .metrics import compute_metrics

log = logging.getLogger(__name__)

# batch_loss(pred, x_batch, y_batch) -> (loss, {"soft": float, "hard": float})
BatchLoss = Callable[[Tensor, np.ndarray, np.ndarray], tuple[Tensor, dict]]


class TrainingDiverged(FloatingPointError):
    """Loss became non-finite; parameters were restored to the last good state."""

    def __init__(self, msg: str, report: "TrainReport"):
        super().__init__(msg)
        self.report = report


@dataclass
class TrainSettings:
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 16
    patience: int = 10
    seed: int = 0


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    soft_loss: list[float] = field(default_factory=list)
    hard_loss: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    val_mape: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    wall_seconds: float = 0.0

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def check(self) -> None:
        lengths = {len(v) for v in (self.train_loss, self.soft_loss, self.hard_loss, self.val_mae, self.val_rmse, self.val_mape)}
        if len(lengths) != 1:
            raise AssertionError(f"trace lengths differ: {lengths}")
        if not 0 <= self.best_epoch < self.epochs_run:
            raise AssertionError(f"best epoch {self.best_epoch} outside 0..{self.epochs_run - 1}")

    def to_dict(self, with_time: bool = True) -> dict:
        d = asdict(self)
        if not with_time:
            d.pop("wall_seconds")
        return d


def predict(forward: Callable[[np.ndarray], Tensor], inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Run ``forward`` without a tape over ``inputs`` in chunks."""
    outs = [forward(inputs[i : i + batch_size]).data for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs, axis=0)


def fit(
    params: list[Parameter],
    forward: Callable[[np.ndarray], Tensor],
    batch_loss: BatchLoss,
    train: Windows,
    val: Windows,
    stats: NormStats,
    settings: TrainSettings,
) -> TrainReport:
    """Adam over shuffled minibatches; keeps the parameters of the best validation MAE.

    Validation uses the hard (ground-truth) MAE in denormalized units.
    Training stops early after ``patience`` epochs without improvement.
    """
    if len(train) == 0:
        raise ValueError("training split has no windows")
    opt = Adam(params, AdamConfig(lr=settings.lr))
    rng = seeded_rng(settings.seed)
    report = TrainReport()
    best = math.inf
    best_state = [p.data.copy() for p in params]
    since_best = 0
    start = time.perf_counter()

    for epoch in range(settings.epochs):
        order = rng.permutation(len(train))
        tot = soft = hard = 0.0
        n_batches = 0
        for i in range(0, len(order), settings.batch_size):
            idx = np.sort(order[i : i + settings.batch_size])
            xb, yb = train.inputs[idx], train.targets[idx]
            with Tape() as tape:
                pred = forward(xb)
                loss, parts = batch_loss(pred, xb, yb)
            value = loss.item()
            if not math.isfinite(value):
                for p, s in zip(params, best_state):
                    p.data[...] = s
                report.wall_seconds = time.perf_counter() - start
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch} batch {i // settings.batch_size}; "
                    f"restored parameters from epoch {report.best_epoch}",
                    report,
                )
            backward(tape, loss)
            opt.step()
            tot += value
            soft += parts.get("soft", 0.0)
            hard += parts.get("hard", value)
            n_batches += 1

        vm = compute_metrics(predict(forward, val.inputs), val.targets, stats) if len(val) else None
        report.train_loss.append(tot / n_batches)
        report.soft_loss.append(soft / n_batches)
        report.hard_loss.append(hard / n_batches)
        report.val_mae.append(vm.mae if vm else tot / n_batches)
        report.val_rmse.append(vm.rmse if vm else math.nan)
        report.val_mape.append(vm.mape if vm else math.nan)
        log.info("epoch %d loss %.5f val_mae %.5f", epoch, report.train_loss[-1], report.val_mae[-1])

        if report.val_mae[-1] < best:
            best = report.val_mae[-1]
            report.best_epoch = epoch
            best_state = [p.data.copy() for p in params]
            since_best = 0
        else:
            since_best += 1
            if since_best >= settings.patience:
                report.stopped_early = True
                break

    for p, s in zip(params, best_state):
        p.data[...] = s
    report.wall_seconds = time.perf_counter() - start
    return report
