"""Synthetic road networks with planted graph-borne and graph-free structure.

Each node's speed is::

    free_flow - daily_rush_dip - incident_load - pair_dip + noise

* ``daily_rush_dip`` is a fixed daily template per node (what a
  time-of-day average recovers exactly).
* ``incident_load`` is first-order diffusion over the road graph: incidents
  fire on edges and the load at each node relaxes toward the
  adjacency-weighted mean of its neighbours. Only the graph carries it.
* ``pair_dip`` couples distant, non-adjacent node pairs: both share a
  congestion dip whose timing and depth change day to day; the second node
  trails the first by ``lag`` steps in the morning and leads it by ``lag``
  in the evening.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import RoadGraph, SensorMeta, SpeedMatrix
from .diffcore import ConfigError, seeded_rng

MORNING_PEAK_H = 8.0
EVENING_PEAK_H = 17.5


@dataclass(frozen=True)
class SynthConfig:
    n_nodes: int = 20
    t_total: int = 2016
    step_minutes: float = 5.0
    grid_extent: float = 10.0
    graph_density: float = 0.15
    lag: int = 3
    free_flow: float = 62.5
    free_flow_spread: float = 2.5
    rush_amplitude: float = 10.0
    rush_spread: float = 0.2
    noise_sigma: float = 0.5
    n_pairs: int = 2
    pair_amplitude: float = 12.0
    pair_width_steps: float = 3.0
    pair_jitter_steps: int = 9
    incident_rate: float = 0.003
    incident_magnitude: float = 20.0
    incident_decay: float = 0.92
    diffusion: float = 0.5

    def validate(self) -> None:
        if self.n_nodes < 4:
            raise ConfigError(f"synthetic data needs n_nodes >= 4, got {self.n_nodes}")
        if self.t_total < 288:
            raise ConfigError(f"synthetic data needs t_total >= 288, got {self.t_total}")
        if self.step_minutes <= 0 or (24 * 60) % self.step_minutes:
            raise ConfigError(f"step_minutes must divide a day, got {self.step_minutes}")
        if self.grid_extent <= 0:
            raise ConfigError("grid_extent must be positive")
        if not 0.0 <= self.graph_density <= 1.0:
            raise ConfigError(f"graph_density must lie in [0, 1], got {self.graph_density}")
        if self.lag < 0 or self.n_pairs < 0 or 2 * self.n_pairs > self.n_nodes:
            raise ConfigError("need lag >= 0 and 0 <= 2 * n_pairs <= n_nodes")
        if not 0.0 <= self.rush_spread <= 1.0 or self.free_flow_spread < 0:
            raise ConfigError("rush_spread must lie in [0, 1] and free_flow_spread be nonnegative")
        if self.noise_sigma < 0 or self.rush_amplitude < 0 or self.pair_amplitude < 0:
            raise ConfigError("amplitudes and noise must be nonnegative")
        if not (0.0 <= self.incident_rate <= 1.0 and 0.0 <= self.incident_decay < 1.0 and 0.0 <= self.diffusion <= 1.0):
            raise ConfigError("incident_rate, diffusion in [0, 1] and incident_decay in [0, 1)")


@dataclass
class SynthDataset:
    matrix: SpeedMatrix
    sensors: list[SensorMeta]
    graph: RoadGraph
    descriptor: dict
    components: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def write_descriptor(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.descriptor, indent=2, sort_keys=True) + "\n")
        return path


def _gauss(x: np.ndarray, center, width) -> np.ndarray:
    return np.exp(-0.5 * ((x - center) / width) ** 2)


def _build_graph(pos: np.ndarray, density: float) -> np.ndarray:
    n = len(pos)
    d = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    adj = np.zeros((n, n))
    if density <= 0:
        return adj
    iu = np.triu_indices(n, k=1)
    dist = d[iu]
    n_edges = max(1, int(round(density * len(dist))))
    chosen = np.argsort(dist, kind="stable")[:n_edges]
    scale = dist.std() if dist.std() > 0 else 1.0
    for c in chosen:
        i, j = iu[0][c], iu[1][c]
        adj[i, j] = adj[j, i] = np.exp(-((d[i, j] / scale) ** 2))
    return adj


def _pick_pairs(pos: np.ndarray, adj: np.ndarray, n_pairs: int) -> list[tuple[int, int]]:
    """Greedy disjoint far-apart pairs that share no edge."""
    n = len(pos)
    d = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    cand = [(d[i, j], i, j) for i in range(n) for j in range(i + 1, n) if adj[i, j] == 0]
    cand.sort(key=lambda c: (-c[0], c[1], c[2]))
    used: set[int] = set()
    pairs = []
    for _, i, j in cand:
        if len(pairs) == n_pairs:
            break
        if i in used or j in used:
            continue
        pairs.append((int(i), int(j)))
        used.update((i, j))
    if len(pairs) < n_pairs:
        raise ConfigError(f"could only plant {len(pairs)} of {n_pairs} non-adjacent pairs")
    return pairs


def generate(config: SynthConfig = SynthConfig(), seed: int = 0) -> SynthDataset:
    """Pure function of ``(config, seed)``."""
    config.validate()
    rng = seeded_rng(seed)
    n, t_total = config.n_nodes, config.t_total
    per_day = int(24 * 60 // config.step_minutes)
    steps = np.arange(t_total)
    tod_h = (steps % per_day) * config.step_minutes / 60.0

    pos = rng.uniform(0.0, config.grid_extent, size=(n, 2))
    adj = _build_graph(pos, config.graph_density)

    free_flow = config.free_flow + rng.uniform(-config.free_flow_spread, config.free_flow_spread, size=n)
    amp_m = config.rush_amplitude * rng.uniform(1.0 - config.rush_spread, 1.0, size=n)
    amp_e = config.rush_amplitude * rng.uniform(1.0 - config.rush_spread, 1.0, size=n)
    rush = amp_m[:, None] * _gauss(tod_h, MORNING_PEAK_H, 1.0) + amp_e[:, None] * _gauss(tod_h, EVENING_PEAK_H, 1.25)

    # graph diffusion of edge incidents
    incidents = np.zeros((n, t_total))
    deg = adj.sum(axis=1)
    mix = np.divide(adj, deg[:, None], out=np.zeros_like(adj), where=deg[:, None] > 0)
    edges = np.argwhere(np.triu(adj) > 0)
    kappa = config.diffusion * (deg > 0)
    load = np.zeros(n)
    for t in range(t_total):
        if len(edges):
            fire = rng.random(len(edges)) < config.incident_rate
            shock = np.zeros(n)
            for i, j in edges[fire]:
                mag = config.incident_magnitude * rng.uniform(0.5, 1.5)
                shock[i] += mag
                shock[j] += mag
        else:
            shock = 0.0
        load = config.incident_decay * ((1.0 - kappa) * load + kappa * (mix @ load)) + shock
        incidents[:, t] = load

    pairs = _pick_pairs(pos, adj, config.n_pairs)
    pair_dip = np.zeros((n, t_total))
    n_days = -(-t_total // per_day)
    morning_step = MORNING_PEAK_H * 60 / config.step_minutes
    evening_step = EVENING_PEAK_H * 60 / config.step_minutes
    day_events = []
    for lead, follow in pairs:
        events = []
        for day in range(n_days):
            base = day * per_day
            cm = base + morning_step + rng.integers(-config.pair_jitter_steps, config.pair_jitter_steps + 1)
            ce = base + evening_step + rng.integers(-config.pair_jitter_steps, config.pair_jitter_steps + 1)
            am = config.pair_amplitude * rng.uniform(0.5, 1.5)
            ae = config.pair_amplitude * rng.uniform(0.5, 1.5)
            w = config.pair_width_steps
            pair_dip[lead] += am * _gauss(steps, cm, w) + ae * _gauss(steps, ce, w)
            pair_dip[follow] += am * _gauss(steps, cm + config.lag, w) + ae * _gauss(steps, ce - config.lag, w)
            events.append({"morning_center": int(cm), "evening_center": int(ce), "morning_amp": float(am), "evening_amp": float(ae)})
        day_events.append(events)

    noise = config.noise_sigma * rng.standard_normal((n, t_total))
    template = free_flow[:, None] - rush
    values = np.maximum(template - incidents - pair_dip + noise, 0.0)

    start = dt.datetime(2024, 1, 1)
    stamps = [(start + dt.timedelta(minutes=float(config.step_minutes) * t)).isoformat() for t in range(t_total)]
    sensors = [SensorMeta(f"s{i:03d}", float(pos[i, 0]), float(pos[i, 1])) for i in range(n)]
    descriptor = {
        "seed": int(seed),
        "config": asdict(config),
        "pairs": [
            {"lead": sensors[a].id, "follow": sensors[b].id, "lead_index": a, "follow_index": b,
             "morning_lag": config.lag, "evening_lag": -config.lag, "days": ev}
            for (a, b), ev in zip(pairs, day_events)
        ],
        "free_flow": free_flow.tolist(),
        "rush_amplitude_morning": amp_m.tolist(),
        "rush_amplitude_evening": amp_e.tolist(),
        "n_edges": int(len(edges)),
    }
    components = {"template": template, "incidents": incidents, "pair_dip": pair_dip, "noise": noise}
    return SynthDataset(
        SpeedMatrix(values, config.step_minutes, stamps), sensors, RoadGraph(adj), descriptor, components
    )
