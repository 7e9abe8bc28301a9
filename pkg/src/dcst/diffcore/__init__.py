"""Minimal reverse-mode differentiation over float64 numpy arrays."""
from . import ops
from .gradcheck import grad_check, numeric_grad
from .nn import (
    AttentionParams,
    ConfigError,
    MlpParams,
    glorot,
    mae,
    mlp_block,
    mse,
    multi_head_attention,
    ones,
    zeros,
)
from .ops import layer_norm, linear, softmax
from .optim import Adam, AdamConfig
from .rng import seeded_rng
from .tensor import (
    DimensionError,
    NonFiniteError,
    Parameter,
    Tape,
    Tensor,
    as_tensor,
    backward,
    set_debug,
)

__all__ = [
    "Adam",
    "AdamConfig",
    "AttentionParams",
    "ConfigError",
    "DimensionError",
    "MlpParams",
    "NonFiniteError",
    "Parameter",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "glorot",
    "grad_check",
    "layer_norm",
    "linear",
    "mae",
    "mlp_block",
    "mse",
    "multi_head_attention",
    "numeric_grad",
    "ones",
    "ops",
    "seeded_rng",
    "set_debug",
    "softmax",
    "zeros",
]
