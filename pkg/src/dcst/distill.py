"""Teacher-student integration: soft/hard loss, student training, alpha/beta sweep."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .data import DataBundle
from .diffcore import ConfigError, Tensor, as_tensor, mae, mse, ops
from .metrics import Metrics, compute_metrics, fmt
from .model import AblationMode, DcstModel
from .teacher import GnnModel
from .training import TrainReport, TrainSettings, fit, predict

SWEEP_PAIRS = ((0.1, 0.9), (0.3, 0.7), (0.5, 0.5), (0.7, 0.3), (0.9, 0.1))
SWEEP_COLUMNS = ["alpha", "beta", "val_mae", "val_rmse", "val_mape", "test_mae", "test_rmse", "test_mape"]


@dataclass
class DistillConfig:
    alpha: float = 0.5
    beta: float = 0.5
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    patience: int = 10
    loss: str = "mae"

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ConfigError(f"need alpha, beta >= 0 with alpha + beta > 0, got ({self.alpha}, {self.beta})")
        if self.loss not in ("mae", "mse"):
            raise ConfigError(f"loss must be 'mae' or 'mse', got {self.loss!r}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("lr, epochs, batch_size and patience must be positive")

    def settings(self) -> TrainSettings:
        return TrainSettings(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size, patience=self.patience, seed=self.seed)


def distill_loss(y_student, y_teacher, y_true, alpha: float, beta: float, loss: str = "mae") -> Tensor:
    """``alpha * err(student, teacher) + beta * err(student, truth)``.

    Teacher outputs and truth are constants; only ``y_student`` carries
    gradient.
    """
    y_student = as_tensor(y_student)
    y_teacher = np.asarray(y_teacher.data if isinstance(y_teacher, Tensor) else y_teacher)
    y_true = np.asarray(y_true.data if isinstance(y_true, Tensor) else y_true)
    err = mse if loss == "mse" else mae
    soft = err(y_student, y_teacher)
    hard = err(y_student, y_true)
    return ops.add(ops.mul(soft, float(alpha)), ops.mul(hard, float(beta)))


def train_student(
    student: DcstModel,
    teacher: GnnModel | None,
    data: DataBundle,
    config: DistillConfig,
    ablation: AblationMode | str = AblationMode.FULL,
) -> TrainReport:
    """Minibatch Adam on the distillation loss; the teacher stays untouched.

    With ``alpha == 0`` the soft term is dropped from the graph entirely, so
    the run is plain supervised training (and ``teacher`` may be None).
    """
    config.validate()
    ablation = AblationMode(ablation)
    if config.alpha > 0:
        if teacher is None:
            raise ConfigError("alpha > 0 requires a teacher")
    if teacher is not None and not teacher.frozen:
        raise ConfigError("teacher must be frozen before distillation")
    err = mse if config.loss == "mse" else mae

    def forward(xb):
        return student.forward(xb, ablation)

    def batch_loss(pred, xb, yb):
        hard = err(pred, yb)
        if config.alpha == 0:
            soft_val = float(err(pred.data, teacher.forward(xb).data).data) if teacher is not None else 0.0
            return ops.mul(hard, float(config.beta)), {"soft": soft_val, "hard": hard.item()}
        y_teacher = teacher.forward(xb).data  # frozen: nothing is recorded
        soft = err(pred, y_teacher)
        loss = ops.add(ops.mul(soft, float(config.alpha)), ops.mul(hard, float(config.beta)))
        return loss, {"soft": soft.item(), "hard": hard.item()}

    report = fit(student.parameters(), forward, batch_loss, data.train, data.val, data.stats, config.settings())
    report.check()
    return report


def evaluate(model, data: DataBundle, part: str = "test", ablation: AblationMode | str | None = None) -> Metrics:
    """Denormalized metrics of ``model`` on one split's windows."""
    w = getattr(data, part)
    if ablation is None:
        fwd = model.forward
    else:
        fwd = lambda xb: model.forward(xb, ablation)  # noqa: E731
    return compute_metrics(predict(fwd, w.inputs), w.targets, data.stats)


@dataclass
class SweepEntry:
    alpha: float
    beta: float
    report: TrainReport
    val: Metrics
    test: Metrics

    def row(self) -> list[str]:
        return [fmt(self.alpha, 2), fmt(self.beta, 2), *self.val.as_row(), *self.test.as_row()]


def sweep(
    student_factory: Callable[[], DcstModel],
    teacher: GnnModel,
    data: DataBundle,
    base: DistillConfig,
    pairs=SWEEP_PAIRS,
) -> list[SweepEntry]:
    """Train one fresh student per (alpha, beta) pair with alpha + beta = 1."""
    if not teacher.frozen:
        raise ConfigError("teacher must be frozen before the sweep")
    entries = []
    for alpha, beta in pairs:
        if abs(alpha + beta - 1.0) > 1e-12:
            raise ConfigError(f"sweep pairs must satisfy alpha + beta = 1, got ({alpha}, {beta})")
        student = student_factory()
        report = train_student(student, teacher, data, replace(base, alpha=alpha, beta=beta))
        entries.append(SweepEntry(alpha, beta, report, evaluate(student, data, "val"), evaluate(student, data, "test")))
    return entries


def best_entry(entries: list[SweepEntry]) -> SweepEntry:
    """Entry with the lowest validation MAE (ties go to the earlier pair)."""
    return min(entries, key=lambda e: e.val.mae)


def write_sweep_csv(entries: list[SweepEntry], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for e in entries:
            w.writerow(e.row())
    return path


def config_dict(config: DistillConfig) -> dict:
    return asdict(config)
