"""Forecast metrics and the historical-average baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DatasetSplit, NormStats, denormalize, window

MAPE_MIN_TRUTH = 1e-3


@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    mape: float  # percent; NaN when every truth entry is masked

    def as_row(self, digits: int = 4) -> list[str]:
        return [fmt(self.mae, digits), fmt(self.rmse, digits), fmt(self.mape, digits)]


def fmt(v: float, digits: int = 4) -> str:
    return "NA" if v is None or math.isnan(v) else f"{v:.{digits}f}"


def compute_metrics(pred, truth, stats: NormStats | None = None) -> Metrics:
    """MAE / RMSE / MAPE averaged jointly over all nodes and horizons.

    With ``stats`` both arrays are taken as normalized and denormalized
    first. MAPE ignores entries whose true value is below 1e-3 in magnitude.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if stats is not None:
        pred, truth = denormalize(pred, stats), denormalize(truth, stats)
    err = pred - truth
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    keep = np.abs(truth) >= MAPE_MIN_TRUTH
    mape = float((np.abs(err[keep]) / np.abs(truth[keep])).mean() * 100.0) if keep.any() else math.nan
    return Metrics(mae, rmse, mape)


def slot_averages(values: np.ndarray, train: range, slots_per_day: int) -> np.ndarray:
    """``N x slots`` training-range average per time-of-day slot; unseen slots get the node mean."""
    n = values.shape[0]
    sums = np.zeros((n, slots_per_day))
    counts = np.zeros(slots_per_day)
    for t in train:
        sums[:, t % slots_per_day] += values[:, t]
        counts[t % slots_per_day] += 1
    node_mean = values[:, train.start : train.stop].mean(axis=1)
    seen = counts > 0
    out = np.repeat(node_mean[:, None], slots_per_day, axis=1)
    out[:, seen] = sums[:, seen] / counts[seen]
    return out


def ha_predict(values, train: range, origins, horizon: int, slots_per_day: int) -> np.ndarray:
    """Historical-average forecasts ``[S, N, H]`` (raw units) for windows at ``origins``."""
    table = slot_averages(np.asarray(values, dtype=np.float64), train, slots_per_day)
    steps = np.asarray(origins)[:, None] + np.arange(horizon)[None, :]
    return table[:, steps % slots_per_day].transpose(1, 0, 2)


def ha_baseline(
    values,
    split: DatasetSplit,
    slots_per_day: int,
    part: str = "test",
    input_len: int = 12,
    horizon: int = 12,
) -> Metrics:
    """Evaluate the historical average on the windows of one split range (raw units)."""
    values = np.asarray(values, dtype=np.float64)
    w = window(values, getattr(split, part), input_len, horizon)
    pred = ha_predict(values, split.train, w.origins, horizon, slots_per_day)
    return compute_metrics(pred, w.targets)
