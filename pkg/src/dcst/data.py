"""Traffic speed datasets: CSV ingestion, chronological splits, windows, z-scoring."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class IngestionError(ValueError):
    """Malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class SensorMeta:
    id: str
    x: float
    y: float


@dataclass
class RoadGraph:
    adjacency: np.ndarray  # N x N, nonnegative, 0 = no edge

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise IngestionError(f"adjacency must be square, got {a.shape}")
        if np.any(a < 0):
            raise IngestionError("adjacency weights must be nonnegative")
        self.adjacency = a


@dataclass
class SpeedMatrix:
    values: np.ndarray  # N x T_total
    step_minutes: float = 5.0
    timestamps: list[str] | None = None

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def slots_per_day(self) -> int:
        return max(1, int(round(24 * 60 / self.step_minutes)))


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float


@dataclass(frozen=True)
class DatasetSplit:
    train: range
    val: range
    test: range
    stats: NormStats


@dataclass
class Windows:
    """Stacked sliding-window samples drawn from one split range.

    ``inputs[s]`` covers columns ``origins[s]-T .. origins[s]-1`` and
    ``targets[s]`` covers ``origins[s] .. origins[s]+H-1``.
    """

    inputs: np.ndarray  # S x N x T
    targets: np.ndarray  # S x N x H
    origins: np.ndarray  # S
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.origins)


# --------------------------------------------------------------------------- CSV


def _read_rows(path: Path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row]


def _parse_float(cell: str, where: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise IngestionError(f"non-numeric cell {cell!r} at {where}") from None
    if not math.isfinite(v):
        raise IngestionError(f"non-finite cell {cell!r} at {where}")
    return v


def impute(values: np.ndarray) -> np.ndarray:
    """Forward-fill NaNs along time; leading gaps take the node's observed mean."""
    out = values.copy()
    for i in range(out.shape[0]):
        row = out[i]
        seen = ~np.isnan(row)
        if not seen.any():
            raise IngestionError(f"sensor row {i} has no observed values")
        fill = row[seen].mean()
        last = np.nan
        for t in range(row.size):
            if np.isnan(row[t]):
                row[t] = fill if np.isnan(last) else last
            else:
                last = row[t]
    return out


def load_csv(
    speeds_path, sensors_path, adjacency_path, step_minutes: float = 5.0
) -> tuple[SpeedMatrix, list[SensorMeta], RoadGraph]:
    """Read speeds, sensor positions and an edge list into aligned structures.

    The speeds header is ``timestamp,<id>,<id>,...``; sensor rows are
    ``id,x,y``; adjacency rows are ``src,dst,weight`` and are symmetrized.
    Empty speed cells are imputed (see :func:`impute`).
    """
    srows = _read_rows(Path(sensors_path))
    if srows and srows[0][:3] == ["id", "x", "y"]:
        srows = srows[1:]
    sensors = []
    for r, row in enumerate(srows, start=2):
        if len(row) != 3:
            raise IngestionError(f"{sensors_path}: row {r} needs id,x,y")
        sensors.append(
            SensorMeta(row[0], _parse_float(row[1], f"{sensors_path} row {r}"), _parse_float(row[2], f"{sensors_path} row {r}"))
        )
    index = {s.id: i for i, s in enumerate(sensors)}
    if len(index) != len(sensors):
        raise IngestionError(f"{sensors_path}: duplicate sensor ids")

    rows = _read_rows(Path(speeds_path))
    if not rows:
        raise IngestionError(f"{speeds_path}: empty file")
    header = rows[0][1:]
    if sorted(header) != sorted(index):
        raise IngestionError(f"{speeds_path}: header ids {header} do not match sensors {list(index)}")
    order = [header.index(s.id) for s in sensors]
    n, t_total = len(sensors), len(rows) - 1
    raw = np.full((n, t_total), np.nan)
    stamps = []
    for t, row in enumerate(rows[1:]):
        if len(row) != len(header) + 1:
            raise IngestionError(f"{speeds_path}: row {t + 2} has {len(row)} cells, expected {len(header) + 1}")
        stamps.append(row[0])
        for i, col in enumerate(order):
            cell = row[col + 1].strip()
            if cell:
                raw[i, t] = _parse_float(cell, f"{speeds_path} row {t + 2} column {header[col]!r}")
    values = impute(raw)
    if np.any(values < 0):
        raise IngestionError(f"{speeds_path}: negative speeds")

    adj = np.zeros((n, n))
    arows = _read_rows(Path(adjacency_path))
    if arows and arows[0][:3] == ["src", "dst", "weight"]:
        arows = arows[1:]
    for r, row in enumerate(arows, start=2):
        if len(row) != 3:
            raise IngestionError(f"{adjacency_path}: row {r} needs src,dst,weight")
        src, dst = row[0], row[1]
        for sid in (src, dst):
            if sid not in index:
                raise IngestionError(f"{adjacency_path}: row {r} references unknown sensor {sid!r}")
        w = _parse_float(row[2], f"{adjacency_path} row {r}")
        i, j = index[src], index[dst]
        adj[i, j] = max(adj[i, j], w)
    adj = np.maximum(adj, adj.T)
    return SpeedMatrix(values, step_minutes, stamps), sensors, RoadGraph(adj)


def save_csv(out_dir, matrix: SpeedMatrix, sensors: list[SensorMeta], graph: RoadGraph) -> dict[str, Path]:
    """Write the three CSVs read by :func:`load_csv`; floats use ``repr`` for exact round-trips."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "speeds": out_dir / "speeds.csv",
        "sensors": out_dir / "sensors.csv",
        "adjacency": out_dir / "adjacency.csv",
    }
    stamps = matrix.timestamps or [str(t) for t in range(matrix.n_steps)]
    with open(paths["speeds"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + [s.id for s in sensors])
        for t in range(matrix.n_steps):
            w.writerow([stamps[t]] + [repr(float(v)) for v in matrix.values[:, t]])
    with open(paths["sensors"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y"])
        for s in sensors:
            w.writerow([s.id, repr(s.x), repr(s.y)])
    with open(paths["adjacency"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "weight"])
        a = graph.adjacency
        for i, j in zip(*np.nonzero(np.triu(a))):
            w.writerow([sensors[i].id, sensors[j].id, repr(float(a[i, j]))])
    return paths


# ------------------------------------------------------------------ splitting


def split(matrix: SpeedMatrix, fractions=(0.7, 0.2, 0.1)) -> DatasetSplit:
    """Chronological train/val/test ranges; z-score stats from train only."""
    t_total = matrix.n_steps
    if t_total < 10:
        raise ValueError(f"need at least 10 time steps to split, got {t_total}")
    n_train = math.floor(fractions[0] * t_total)
    n_val = math.floor(fractions[1] * t_total)
    train = range(0, n_train)
    val = range(n_train, n_train + n_val)
    test = range(n_train + n_val, t_total)
    block = matrix.values[:, train.start : train.stop]
    stats = NormStats(mean=float(block.mean()), std=max(float(block.std()), 1e-6))
    return DatasetSplit(train, val, test, stats)


def normalize(x, stats: NormStats) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - stats.mean) / stats.std


def denormalize(y, stats: NormStats) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) * stats.std + stats.mean


def window(values: np.ndarray, rng_: range, input_len: int = 12, horizon: int = 12) -> Windows:
    """All stride-1 windows lying entirely inside ``rng_``.

    ``values`` is the full N x T_total matrix (normalized or raw); the
    returned origins index into its time axis.
    """
    length = len(rng_)
    n = values.shape[0]
    count = length - input_len - horizon + 1
    if count <= 0:
        msg = f"range of length {length} is shorter than input {input_len} + horizon {horizon}"
        log.warning(msg)
        return Windows(
            np.zeros((0, n, input_len)), np.zeros((0, n, horizon)), np.zeros(0, dtype=np.int64), [msg]
        )
    origins = np.arange(rng_.start + input_len, rng_.start + input_len + count)
    steps_in = origins[:, None] + np.arange(-input_len, 0)[None, :]
    steps_out = origins[:, None] + np.arange(horizon)[None, :]
    inputs = values[:, steps_in].transpose(1, 0, 2)
    targets = values[:, steps_out].transpose(1, 0, 2)
    return Windows(np.ascontiguousarray(inputs), np.ascontiguousarray(targets), origins)


@dataclass
class DataBundle:
    """Everything a training run needs: raw data, split, and normalized windows."""

    matrix: SpeedMatrix
    sensors: list[SensorMeta]
    graph: RoadGraph
    split: DatasetSplit
    train: Windows
    val: Windows
    test: Windows
    horizon_mode: str = "per_step"
    horizon: int = 12  # forecast steps before any "mean" reduction

    @property
    def stats(self) -> NormStats:
        return self.split.stats


def prepare(
    matrix: SpeedMatrix,
    sensors: list[SensorMeta],
    graph: RoadGraph,
    fractions=(0.7, 0.2, 0.1),
    input_len: int = 12,
    horizon: int = 12,
    horizon_mode: str = "per_step",
) -> DataBundle:
    """Split chronologically, z-score with train statistics, cut windows per range.

    ``horizon_mode="mean"`` replaces each target window by its average over
    the horizon (one output step per node).
    """
    if horizon_mode not in ("per_step", "mean"):
        raise ValueError(f"unknown horizon_mode {horizon_mode!r}")
    sp = split(matrix, fractions)
    z = normalize(matrix.values, sp.stats)
    parts = [window(z, r, input_len, horizon) for r in (sp.train, sp.val, sp.test)]
    if horizon_mode == "mean":
        for w in parts:
            w.targets = w.targets.mean(axis=2, keepdims=True)
    return DataBundle(matrix, sensors, graph, sp, *parts, horizon_mode=horizon_mode, horizon=horizon)
