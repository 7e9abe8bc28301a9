"""Dual cross-scale transformer: embedding, temporal layers, spatial layers, head.

Temporal layers attend, per node, from every step to the segment summaries
of that node; spatial layers attend, per time step, from every node to the
occupied-cell summaries at that step. Both stacks run fine to coarse, and
the temporal stack always runs first.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SensorMeta
from .diffcore import (
    AttentionParams,
    ConfigError,
    MlpParams,
    Parameter,
    Tensor,
    as_tensor,
    glorot,
    mlp_block,
    multi_head_attention,
    ones,
    ops,
    seeded_rng,
    zeros,
)
from .scales import (
    GridAssignment,
    SpatialScaleParams,
    TemporalScaleParams,
    assign_grids,
    spatial_scale_repr,
    temporal_scale_repr,
    validate_grids,
    validate_segments,
)


class AblationMode(str, enum.Enum):
    FULL = "full"
    NO_SPATIAL = "no_spatial"
    NO_TEMPORAL = "no_temporal"
    SINGLE_SCALE = "single_scale"


@dataclass
class DcstConfig:
    d_model: int = 32
    heads: int = 4
    d_ff: int = 128
    input_len: int = 12
    horizon: int = 12
    segments: list[int] = field(default_factory=lambda: [2, 4, 6])
    grids: list[list[int]] = field(default_factory=lambda: [[8, 8], [4, 4], [2, 2]])
    share_spatial_weights: bool = False
    step_embedding: bool = False
    ln_eps: float = 1e-5

    def validate(self) -> None:
        if min(self.d_model, self.heads, self.d_ff, self.input_len, self.horizon) < 1:
            raise ConfigError("d_model, heads, d_ff, input_len and horizon must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if not self.segments or not self.grids:
            raise ConfigError("need at least one temporal and one spatial scale")
        validate_segments(self.segments, self.input_len)
        validate_grids(self.grids)

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_count(config: DcstConfig, n_nodes: int) -> int:
    """Closed-form parameter count for ``config`` on ``n_nodes`` sensors."""
    d, t = config.d_model, config.input_len
    block = 4 * d * d + d + (2 * d * config.d_ff + config.d_ff + d) + 4 * d
    total = 2 * d  # embedding
    if config.step_embedding:
        total += t * d
    for xi in config.segments:
        total += block + (t // xi) * (xi * d * d + d) + 2 * d
    spatial_w = d * d if config.share_spatial_weights else n_nodes * d * d
    total += len(config.grids) * (block + spatial_w + n_nodes * d + 2 * d)
    total += t * d * config.horizon + config.horizon
    return total


@dataclass
class _Layer:
    attn: AttentionParams
    mlp: MlpParams
    ln1_g: Parameter
    ln1_b: Parameter
    ln2_g: Parameter
    ln2_b: Parameter

    @classmethod
    def init(cls, rng, d: int, d_ff: int, prefix: str) -> "_Layer":
        return cls(
            AttentionParams.init(rng, d, prefix + "attn."),
            MlpParams.init(rng, d, d_ff, prefix + "mlp."),
            ones(d, prefix + "ln1_g"),
            zeros(d, prefix + "ln1_b"),
            ones(d, prefix + "ln2_g"),
            zeros(d, prefix + "ln2_b"),
        )

    def named(self) -> dict[str, Parameter]:
        out = {**self.attn.named(), **self.mlp.named()}
        for p in (self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b):
            out[p.name] = p
        return out


class DcstModel:
    """Student forecaster. ``params`` maps stable names to parameters."""

    kind = "dcst"

    def __init__(self, config: DcstConfig, sensors: list[SensorMeta], seed: int = 0):
        config.validate()
        self.config = config
        self.sensors = list(sensors)
        self.n_nodes = len(sensors)
        self.assignments: list[GridAssignment] = assign_grids(sensors, config.grids)
        rng = seeded_rng(seed)
        d, t = config.d_model, config.input_len

        self.embed_w = glorot(rng, 1, d, "embed.w")
        self.embed_b = zeros(d, "embed.b")
        self.step_emb = zeros((t, d), "embed.steps") if config.step_embedding else None
        self.temporal = []
        for l, xi in enumerate(config.segments):
            pre = f"temporal.{l}."
            self.temporal.append(
                (TemporalScaleParams.init(rng, t, xi, d, pre + "scale."), _Layer.init(rng, d, config.d_ff, pre))
            )
        self.spatial = []
        for l in range(len(config.grids)):
            pre = f"spatial.{l}."
            self.spatial.append(
                (
                    SpatialScaleParams.init(rng, self.n_nodes, d, config.share_spatial_weights, pre + "scale."),
                    _Layer.init(rng, d, config.d_ff, pre),
                )
            )
        self.head_w = glorot(rng, t * d, config.horizon, "head.w")
        self.head_b = zeros(config.horizon, "head.b")

    # -------------------------------------------------------------- params
    @property
    def params(self) -> dict[str, Parameter]:
        out = {"embed.w": self.embed_w, "embed.b": self.embed_b}
        if self.step_emb is not None:
            out["embed.steps"] = self.step_emb
        for scale, layer in self.temporal + self.spatial:
            out.update(scale.named())
            out.update(layer.named())
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def config_echo(self) -> dict:
        return {"config": self.config.to_dict(), "n_nodes": self.n_nodes}

    # ------------------------------------------------------------- forward
    def embed(self, x) -> Tensor:
        """``[B, N, T]`` speeds to ``[B, N, T, D]`` through a shared scalar-to-vector map."""
        x = as_tensor(x)
        h = ops.linear(x.reshape(x.shape + (1,)), self.embed_w, self.embed_b)
        if self.step_emb is not None:
            h = ops.add(h, self.step_emb)
        return h

    def _block(self, h: Tensor, q: Tensor, kv: Tensor, layer: _Layer, weights_out) -> Tensor:
        eps = self.config.ln_eps
        a = multi_head_attention(q, kv, kv, layer.attn, self.config.heads, weights_out)
        h1 = ops.layer_norm(ops.add(h, a), layer.ln1_g, layer.ln1_b, eps)
        return ops.layer_norm(ops.add(h1, mlp_block(h1, layer.mlp)), layer.ln2_g, layer.ln2_b, eps)

    def temporal_layer(self, h: Tensor, l: int, weights_out: list | None = None) -> Tensor:
        """Per node: steps query that node's segment summaries at scale ``l`` (0-based)."""
        scale, layer = self.temporal[l]
        p = temporal_scale_repr(h, self.config.segments[l], scale)
        return self._block(h, h, p, layer, weights_out)

    def spatial_layer(self, h: Tensor, l: int, weights_out: list | None = None) -> Tensor:
        """Per time step: nodes query the occupied-cell summaries at scale ``l`` (0-based)."""
        scale, layer = self.spatial[l]
        z = spatial_scale_repr(h, self.assignments[l], scale)  # B M T D
        ht = h.transpose(0, 2, 1, 3)  # B T N D
        zt = z.transpose(0, 2, 1, 3)  # B T M D
        out = self._block(ht, ht, zt, layer, weights_out)
        return out.transpose(0, 2, 1, 3)

    def forward(self, x, ablation: AblationMode | str = AblationMode.FULL, weights_out: list | None = None) -> Tensor:
        """Normalized ``[N, T]`` or ``[B, N, T]`` inputs to ``[..., N, horizon]`` forecasts."""
        ablation = AblationMode(ablation)
        x = as_tensor(x)
        single = x.ndim == 2
        if single:
            x = x.reshape((1,) + x.shape)
        b, n, t = x.shape
        if n != self.n_nodes or t != self.config.input_len:
            raise ConfigError(f"input shape {x.shape} does not match model (N={self.n_nodes}, T={self.config.input_len})")
        h = self.embed(x)
        n_t = 1 if ablation is AblationMode.SINGLE_SCALE else len(self.temporal)
        n_s = 1 if ablation is AblationMode.SINGLE_SCALE else len(self.spatial)
        if ablation is not AblationMode.NO_TEMPORAL:
            for l in range(n_t):
                h = self.temporal_layer(h, l, weights_out)
        if ablation is not AblationMode.NO_SPATIAL:
            for l in range(n_s):
                h = self.spatial_layer(h, l, weights_out)
        y = ops.linear(h.reshape(b, n, t * self.config.d_model), self.head_w, self.head_b)
        return y.reshape(n, self.config.horizon) if single else y

    __call__ = forward
