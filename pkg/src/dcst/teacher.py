"""STGCN-style graph teacher: gated temporal convolutions around graph convolutions."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from .data import NormStats, RoadGraph, Windows
from .diffcore import ConfigError, Parameter, Tensor, as_tensor, glorot, mae, mse, ones, ops, seeded_rng, zeros
from .training import TrainReport, TrainSettings, fit


@dataclass
class GnnConfig:
    hidden: int = 32
    blocks: int = 2
    kernel: int = 3
    input_len: int = 12
    horizon: int = 12

    def out_len(self) -> int:
        return self.input_len - 2 * self.blocks * (self.kernel - 1)

    def validate(self) -> None:
        if min(self.hidden, self.blocks, self.kernel, self.input_len, self.horizon) < 1:
            raise ConfigError("GNN sizes must be positive")
        if self.kernel >= self.input_len:
            raise ConfigError(f"kernel {self.kernel} must be shorter than the input window {self.input_len}")
        if self.out_len() < 1:
            raise ConfigError(
                f"{self.blocks} blocks of kernel {self.kernel} consume the whole {self.input_len}-step window"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def normalize_adjacency(adj) -> np.ndarray:
    """Symmetric normalization with self-loops: ``D^-1/2 (A + I) D^-1/2``."""
    a = np.asarray(adj, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("adjacency must be nonnegative")
    a = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


class GnnModel:
    """Teacher forecaster over a fixed road graph."""

    kind = "gnn"

    def __init__(self, config: GnnConfig, graph: RoadGraph, seed: int = 0):
        config.validate()
        self.config = config
        self.n_nodes = graph.n_nodes
        self.graph_adjacency = graph.adjacency.copy()
        self.adj_norm = normalize_adjacency(graph.adjacency)
        self.frozen = False
        rng = seeded_rng(seed)
        c, k = config.hidden, config.kernel
        self.blocks = []
        cin = 1
        for b in range(config.blocks):
            pre = f"block.{b}."
            self.blocks.append(
                {
                    "t1_w": glorot(rng, k * cin, c, pre + "t1_w"),
                    "t1_b": zeros(c, pre + "t1_b"),
                    "t1_gw": glorot(rng, k * cin, c, pre + "t1_gw"),
                    "t1_gb": zeros(c, pre + "t1_gb"),
                    "g_w": glorot(rng, c, c, pre + "g_w"),
                    "g_b": zeros(c, pre + "g_b"),
                    "t2_w": glorot(rng, k * c, c, pre + "t2_w"),
                    "t2_b": zeros(c, pre + "t2_b"),
                    "t2_gw": glorot(rng, k * c, c, pre + "t2_gw"),
                    "t2_gb": zeros(c, pre + "t2_gb"),
                    "ln_g": ones(c, pre + "ln_g"),
                    "ln_b": zeros(c, pre + "ln_b"),
                }
            )
            cin = c
        self.head_w = glorot(rng, config.out_len() * c, config.horizon, "head.w")
        self.head_b = zeros(config.horizon, "head.b")

    @property
    def params(self) -> dict[str, Parameter]:
        out = {}
        for blk in self.blocks:
            out.update({p.name: p for p in blk.values()})
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def config_echo(self) -> dict:
        return {"config": self.config.to_dict(), "n_nodes": self.n_nodes}

    def _gated_conv(self, h: Tensor, blk: dict, tag: str) -> Tensor:
        """Valid 1-D convolution along time with a sigmoid gate (GLU)."""
        u = ops.unfold_last2(h, self.config.kernel)
        value = ops.linear(u, blk[tag + "_w"], blk[tag + "_b"])
        gate = ops.linear(u, blk[tag + "_gw"], blk[tag + "_gb"])
        return ops.mul(value, ops.sigmoid(gate))

    def _graph_conv(self, h: Tensor, w: Parameter, b: Parameter) -> Tensor:
        bsz, n, t, c = h.shape
        mixed = ops.matmul(self.adj_norm, h.transpose(1, 0, 2, 3).reshape(n, bsz * t * c))
        mixed = mixed.reshape(n, bsz, t, c).transpose(1, 0, 2, 3)
        return ops.gelu(ops.linear(mixed, w, b))

    def forward(self, x) -> Tensor:
        """Normalized ``[N, T]`` or ``[B, N, T]`` inputs to ``[..., N, horizon]``."""
        x = as_tensor(x)
        single = x.ndim == 2
        if single:
            x = x.reshape((1,) + x.shape)
        b, n, t = x.shape
        if n != self.n_nodes or t != self.config.input_len:
            raise ConfigError(f"input shape {x.shape} does not match teacher (N={self.n_nodes}, T={self.config.input_len})")
        h = x.reshape(b, n, t, 1)
        for blk in self.blocks:
            h = self._gated_conv(h, blk, "t1")
            h = self._graph_conv(h, blk["g_w"], blk["g_b"])
            h = self._gated_conv(h, blk, "t2")
            h = ops.layer_norm(h, blk["ln_g"], blk["ln_b"])
        tout = h.shape[2]
        y = ops.linear(h.reshape(b, n, tout * self.config.hidden), self.head_w, self.head_b)
        return y.reshape(n, self.config.horizon) if single else y

    __call__ = forward


def pretrain(
    model: GnnModel,
    train: Windows,
    val: Windows,
    stats: NormStats,
    settings: TrainSettings = TrainSettings(),
    loss: str = "mae",
) -> TrainReport:
    """Fit the teacher to ground truth; best-validation parameters are kept."""
    if model.frozen:
        raise ValueError("cannot train a frozen teacher")
    loss_fn = mse if loss == "mse" else mae

    def batch_loss(pred, xb, yb):
        l = loss_fn(pred, yb)
        return l, {"soft": 0.0, "hard": l.item()}

    return fit(model.parameters(), model.forward, batch_loss, train, val, stats, settings)


def freeze(model: GnnModel) -> GnnModel:
    """Exclude every teacher parameter from gradient recording and optimizers."""
    for p in model.parameters():
        p.freeze()
    model.frozen = True
    return model


def checksum(model) -> str:
    """SHA-256 over parameter names and bytes."""
    h = hashlib.sha256()
    for name, p in model.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
