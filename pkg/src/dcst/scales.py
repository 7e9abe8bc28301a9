"""Spatial grid scales and temporal segment scales.

A spatial scale partitions the (min-max normalized) sensor bounding box
into ``gx x gy`` cells; each occupied cell summarizes its nodes. A temporal
scale cuts the input window into segments of ``xi`` steps; each segment
summarizes its steps. Both summaries serve as keys/values for cross-scale
attention.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SensorMeta
from .diffcore import ConfigError, Parameter, Tensor, glorot, ones, ops, zeros


@dataclass(frozen=True)
class GridAssignment:
    """Node-to-cell map for one spatial scale; only occupied cells are kept.

    ``node_cell[i]`` is the compact index ``m`` of node ``i``'s cell and
    ``cells[m]`` the flat ``gx*gy`` index of that cell.
    """

    grid: tuple[int, int]
    node_cell: np.ndarray  # N, values in 0..M-1
    cells: np.ndarray  # M flat cell ids, ascending

    @property
    def n_occupied(self) -> int:
        return len(self.cells)

    def members(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.node_cell == m)

    def membership(self) -> np.ndarray:
        """``M x N`` 0/1 matrix; row ``m`` marks the nodes of cell ``m``."""
        g = np.zeros((self.n_occupied, len(self.node_cell)))
        g[self.node_cell, np.arange(len(self.node_cell))] = 1.0
        return g


def validate_grids(grids) -> list[tuple[int, int]]:
    grids = [tuple(int(v) for v in g) for g in grids]
    for g in grids:
        if len(g) != 2 or min(g) < 1:
            raise ConfigError(f"grid sizes must be pairs of positive ints, got {g}")
    counts = [gx * gy for gx, gy in grids]
    if any(b >= a for a, b in zip(counts, counts[1:])):
        raise ConfigError(f"spatial scales must go fine to coarse (cell counts strictly decreasing), got {grids}")
    return grids


def validate_segments(xis, t: int) -> list[int]:
    xis = [int(x) for x in xis]
    for x in xis:
        if x < 1 or t % x:
            raise ConfigError(f"segment length {x} does not divide window length {t}")
    if any(b <= a for a, b in zip(xis, xis[1:])):
        raise ConfigError(f"temporal scales must go fine to coarse (strictly increasing), got {xis}")
    return xis


def normalized_positions(sensors: list[SensorMeta]) -> np.ndarray:
    if not sensors:
        raise ValueError("need at least one sensor")
    pos = np.array([[s.x, s.y] for s in sensors], dtype=np.float64)
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (pos - lo) / span


def assign_cells(unit_pos: np.ndarray, grid: tuple[int, int]) -> GridAssignment:
    gx, gy = grid
    cx = np.minimum(np.floor(gx * unit_pos[:, 0]).astype(np.int64), gx - 1)
    cy = np.minimum(np.floor(gy * unit_pos[:, 1]).astype(np.int64), gy - 1)
    flat = cx * gy + cy
    cells, node_cell = np.unique(flat, return_inverse=True)
    return GridAssignment((gx, gy), node_cell.reshape(-1), cells)


def assign_grids(sensors: list[SensorMeta], grids) -> list[GridAssignment]:
    """One :class:`GridAssignment` per spatial scale, fine to coarse."""
    unit = normalized_positions(sensors)
    return [assign_cells(unit, g) for g in validate_grids(grids)]


def segment_timeline(t: int, xi: int) -> np.ndarray:
    """1-based segment index ``j`` for 1-based steps ``1..t``: ``(j-1)*xi < step <= j*xi``."""
    if xi < 1 or t % xi:
        raise ConfigError(f"segment length {xi} does not divide window length {t}")
    steps = np.arange(1, t + 1)
    return -(-steps // xi)


# ----------------------------------------------------------------- parameters


@dataclass
class SpatialScaleParams:
    weight: Parameter  # N x D x D, or D x D when shared
    bias: Parameter  # N x D
    ln_gain: Parameter
    ln_bias: Parameter

    @classmethod
    def init(cls, rng, n_nodes: int, d: int, shared: bool = False, prefix: str = "") -> "SpatialScaleParams":
        if shared:
            w = glorot(rng, d, d, prefix + "w")
        else:
            limit = np.sqrt(6.0 / (2 * d))
            w = Parameter(rng.uniform(-limit, limit, size=(n_nodes, d, d)), name=prefix + "w")
        return cls(w, zeros((n_nodes, d), prefix + "b"), ones(d, prefix + "ln_g"), zeros(d, prefix + "ln_b"))

    def named(self) -> dict[str, Parameter]:
        return {p.name: p for p in (self.weight, self.bias, self.ln_gain, self.ln_bias)}


@dataclass
class TemporalScaleParams:
    weight: Parameter  # J x (xi*D) x D
    bias: Parameter  # J x D
    ln_gain: Parameter
    ln_bias: Parameter

    @classmethod
    def init(cls, rng, t: int, xi: int, d: int, prefix: str = "") -> "TemporalScaleParams":
        j = t // xi
        limit = np.sqrt(6.0 / (xi * d + d))
        w = Parameter(rng.uniform(-limit, limit, size=(j, xi * d, d)), name=prefix + "w")
        return cls(w, zeros((j, d), prefix + "b"), ones(d, prefix + "ln_g"), zeros(d, prefix + "ln_b"))

    def named(self) -> dict[str, Parameter]:
        return {p.name: p for p in (self.weight, self.bias, self.ln_gain, self.ln_bias)}


# ------------------------------------------------------------ representations


def spatial_scale_repr(h: Tensor, assignment: GridAssignment, params: SpatialScaleParams) -> Tensor:
    """Grid summaries ``[B, M, T, D]`` from node states ``[B, N, T, D]``.

    Each node is mapped by its own affine map, the results are summed over
    the nodes of each occupied cell, and the sum is layer-normalized.
    """
    n, d = h.shape[1], h.shape[3]
    if len(assignment.node_cell) != n:
        raise ConfigError(f"assignment covers {len(assignment.node_cell)} nodes, input has {n}")
    b, t = h.shape[0], h.shape[2]
    hn = h.transpose(1, 0, 2, 3).reshape(n, b * t, d)
    u = ops.matmul(hn, params.weight)  # per-node (or shared) affine map
    u = ops.add(u, params.bias.reshape(n, 1, d))
    z = ops.matmul(assignment.membership(), u.reshape(n, b * t * d))
    z = z.reshape(assignment.n_occupied, b, t, d).transpose(1, 0, 2, 3)
    return ops.layer_norm(z, params.ln_gain, params.ln_bias)


def temporal_scale_repr(h: Tensor, xi: int, params: TemporalScaleParams) -> Tensor:
    """Segment summaries ``[B, N, T/xi, D]`` from node states ``[B, N, T, D]``.

    Segment ``j`` flattens its ``xi`` step vectors (step-major) and applies the
    segment's own affine map, shared by all nodes, then layer norm.
    """
    b, n, t, d = h.shape
    if t % xi:
        raise ConfigError(f"segment length {xi} does not divide window length {t}")
    j = t // xi
    if params.weight.shape != (j, xi * d, d):
        raise ConfigError(f"temporal weight shape {params.weight.shape} != {(j, xi * d, d)}")
    s = h.reshape(b * n, j, xi * d).transpose(1, 0, 2)  # J, B*N, xi*D
    p = ops.add(ops.matmul(s, params.weight), params.bias.reshape(j, 1, d))
    p = p.transpose(1, 0, 2).reshape(b, n, j, d)
    return ops.layer_norm(p, params.ln_gain, params.ln_bias)
