"""Composite blocks: attention, feed-forward, losses and parameter init."""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from . import ops
from .tensor import DimensionError, Parameter, Tensor, as_tensor


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


def glorot(rng: np.random.Generator, din: int, dout: int, name: str = "") -> Parameter:
    limit = np.sqrt(6.0 / (din + dout))
    return Parameter(rng.uniform(-limit, limit, size=(din, dout)), name=name)


def zeros(shape, name: str = "") -> Parameter:
    return Parameter(np.zeros(shape), name=name)


def ones(shape, name: str = "") -> Parameter:
    return Parameter(np.ones(shape), name=name)


@dataclass
class AttentionParams:
    wq: Parameter
    wk: Parameter
    wv: Parameter
    wo: Parameter
    bo: Parameter

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, prefix: str = "") -> "AttentionParams":
        return cls(
            wq=glorot(rng, d, d, prefix + "wq"),
            wk=glorot(rng, d, d, prefix + "wk"),
            wv=glorot(rng, d, d, prefix + "wv"),
            wo=glorot(rng, d, d, prefix + "wo"),
            bo=zeros(d, prefix + "bo"),
        )

    def named(self) -> dict[str, Parameter]:
        return {p.name: p for p in (self.wq, self.wk, self.wv, self.wo, self.bo)}


@dataclass
class MlpParams:
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, d_ff: int, prefix: str = "") -> "MlpParams":
        return cls(
            w1=glorot(rng, d, d_ff, prefix + "w1"),
            b1=zeros(d_ff, prefix + "b1"),
            w2=glorot(rng, d_ff, d, prefix + "w2"),
            b2=zeros(d, prefix + "b2"),
        )

    def named(self) -> dict[str, Parameter]:
        return {p.name: p for p in (self.w1, self.b1, self.w2, self.b2)}


def multi_head_attention(
    q_in,
    k_in,
    v_in,
    params: AttentionParams,
    heads: int,
    weights_out: list | None = None,
) -> Tensor:
    """Scaled dot-product attention with ``heads`` heads.

    Inputs are ``[..., Lq, D]`` and ``[..., Lk, D]`` with identical leading
    axes; queries, keys and values are projected without bias, the merged
    heads pass through an output projection with bias. When ``weights_out``
    is a list the attention weights ``[..., heads, Lq, Lk]`` are appended.
    """
    q_in, k_in, v_in = as_tensor(q_in), as_tensor(k_in), as_tensor(v_in)
    d = q_in.shape[-1]
    if d % heads:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads")
    if k_in.shape != v_in.shape or k_in.shape[-1] != d or k_in.shape[:-2] != q_in.shape[:-2]:
        raise DimensionError(f"attention shapes q={q_in.shape} k={k_in.shape} v={v_in.shape}")
    dh = d // heads
    lead = q_in.shape[:-2]
    lq, lk = q_in.shape[-2], k_in.shape[-2]
    nl = len(lead)
    split = tuple(range(nl)) + (nl + 1, nl, nl + 2)  # [..., L, h, dh] -> [..., h, L, dh]

    q = ops.linear(q_in, params.wq).reshape(lead + (lq, heads, dh)).transpose(split)
    kt = ops.linear(k_in, params.wk).reshape(lead + (lk, heads, dh)).transpose(
        tuple(range(nl)) + (nl + 1, nl + 2, nl)
    )
    v = ops.linear(v_in, params.wv).reshape(lead + (lk, heads, dh)).transpose(split)
    scores = ops.matmul(q, kt)  # [..., h, Lq, Lk]
    attn = ops.softmax(ops.mul(scores, 1.0 / np.sqrt(dh)), axis=-1)
    if weights_out is not None:
        weights_out.append(attn.data)
    ctx = ops.matmul(attn, v).transpose(split).reshape(lead + (lq, d))
    return ops.linear(ctx, params.wo, params.bo)


def mlp_block(x, params: MlpParams) -> Tensor:
    """Two-layer feed-forward block with a GELU in between; preserves shape."""
    return ops.linear(ops.gelu(ops.linear(x, params.w1, params.b1)), params.w2, params.b2)


def _same_shape(pred: Tensor, target: Tensor, what: str) -> None:
    if pred.shape != target.shape:
        raise DimensionError(f"{what}: prediction shape {pred.shape} != target shape {target.shape}")


def mae(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "mae")
    return ops.mean_all(ops.abs_(ops.sub(pred, target)))


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "mse")
    return ops.mean_all(ops.square(ops.sub(pred, target)))
