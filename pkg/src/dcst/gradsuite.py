"""Finite-difference battery over every differentiable building block.

Each case builds a scalar ``sum(f(inputs) * R)`` with a fixed random ``R`` so
that no gradient is trivially constant (a plain sum of a softmax, for one,
has zero gradient everywhere).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import RoadGraph, SensorMeta
from .diffcore import (
    AttentionParams,
    MlpParams,
    Parameter,
    Tensor,
    grad_check,
    mae,
    mlp_block,
    mse,
    multi_head_attention,
    ops,
    seeded_rng,
)
from .distill import distill_loss
from .model import AblationMode, DcstConfig, DcstModel
from .scales import SpatialScaleParams, TemporalScaleParams, assign_cells, spatial_scale_repr, temporal_scale_repr
from .teacher import GnnConfig, GnnModel

ELEMENTWISE_TOL = 1e-5
COMPOSITE_TOL = 1e-4

# builder(rng) -> (scalar closure, inputs to perturb)
Builder = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Parameter]]]


@dataclass(frozen=True)
class GradCase:
    name: str
    elementwise: bool
    build: Builder
    max_coords: int | None = None

    @property
    def tol(self) -> float:
        return ELEMENTWISE_TOL if self.elementwise else COMPOSITE_TOL


def _p(rng, *shape, name="x", scale=1.0) -> Parameter:
    return Parameter(scale * rng.standard_normal(shape), name=name)


def _proj(out: Tensor, r: np.ndarray) -> Tensor:
    return ops.sum_all(ops.mul(out, r))


def _unary(op):
    def build(rng):
        x = _p(rng, 3, 4)
        r = rng.standard_normal((3, 4))
        return (lambda: _proj(op(x), r)), [x]

    return build


def _binary(op):
    def build(rng):
        a, b = _p(rng, 3, 4, name="a"), _p(rng, 4, name="b")  # exercises broadcasting
        r = rng.standard_normal((3, 4))
        return (lambda: _proj(op(a, b), r)), [a, b]

    return build


def _abs(rng):
    # keep inputs away from the kink at zero
    x = Parameter(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.1, 2.0, size=(3, 4)), name="x")
    r = rng.standard_normal((3, 4))
    return (lambda: _proj(ops.abs_(x), r)), [x]


def _linear(rng):
    x, w, b = _p(rng, 2, 3, 4), _p(rng, 4, 5, name="w"), _p(rng, 5, name="b")
    r = rng.standard_normal((2, 3, 5))
    return (lambda: _proj(ops.linear(x, w, b), r)), [x, w, b]


def _matmul(rng):
    a, b = _p(rng, 2, 3, 4, name="a"), _p(rng, 4, 5, name="b")
    r = rng.standard_normal((2, 3, 5))
    return (lambda: _proj(ops.matmul(a, b), r)), [a, b]


def _einsum(rng):
    a, b = _p(rng, 2, 3, 4, name="a"), _p(rng, 2, 4, 5, name="b")
    r = rng.standard_normal((2, 3, 5))
    return (lambda: _proj(ops.einsum("bij,bjk->bik", a, b), r)), [a, b]


def _softmax(rng):
    x = _p(rng, 3, 5)
    r = rng.standard_normal((3, 5))
    return (lambda: _proj(ops.softmax(x, -1), r)), [x]


def _layer_norm(rng):
    x, g, b = _p(rng, 3, 6), _p(rng, 6, name="g"), _p(rng, 6, name="b")
    r = rng.standard_normal((3, 6))
    return (lambda: _proj(ops.layer_norm(x, g, b), r)), [x, g, b]


def _shape_ops(rng):
    x = _p(rng, 2, 3, 4)
    r = rng.standard_normal((4, 6))
    return (lambda: _proj(ops.reshape(ops.transpose(x, (2, 0, 1)), (4, 6)), r)), [x]


def _unfold(rng):
    x = _p(rng, 2, 5, 3)
    r = rng.standard_normal((2, 3, 9))
    return (lambda: _proj(ops.unfold_last2(x, 3), r)), [x]


def _attention(rng):
    d = 4
    q, kv = _p(rng, 2, 3, d, name="q"), _p(rng, 2, 5, d, name="kv")
    params = AttentionParams.init(rng, d, "attn.")
    r = rng.standard_normal((2, 3, d))
    inputs = [q, kv, *params.named().values()]
    return (lambda: _proj(multi_head_attention(q, kv, kv, params, 2), r)), inputs


def _mlp(rng):
    x = _p(rng, 3, 4)
    params = MlpParams.init(rng, 4, 8, "mlp.")
    r = rng.standard_normal((3, 4))
    return (lambda: _proj(mlp_block(x, params), r)), [x, *params.named().values()]


def _losses(rng):
    pred = _p(rng, 3, 4, name="pred")
    y_t, y = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    return (lambda: ops.add(mse(pred, y), distill_loss(pred, y_t, y, 0.3, 0.7))), [pred]


def _mae(rng):
    pred = _p(rng, 3, 4, name="pred")
    y = pred.data + rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4))
    return (lambda: mae(pred, y)), [pred]


def _spatial(rng):
    n, t, d = 6, 3, 4
    pos = rng.uniform(size=(n, 2))
    assignment = assign_cells(pos, (2, 2))
    h = _p(rng, 2, n, t, d, name="h")
    params = SpatialScaleParams.init(rng, n, d, prefix="s.")
    r = rng.standard_normal((2, assignment.n_occupied, t, d))
    return (lambda: _proj(spatial_scale_repr(h, assignment, params), r)), [h, *params.named().values()]


def _temporal(rng):
    n, t, d, xi = 3, 6, 4, 2
    h = _p(rng, 2, n, t, d, name="h")
    params = TemporalScaleParams.init(rng, t, xi, d, prefix="t.")
    r = rng.standard_normal((2, n, t // xi, d))
    return (lambda: _proj(temporal_scale_repr(h, xi, params), r)), [h, *params.named().values()]


def _sensors(rng, n):
    return [SensorMeta(f"n{i}", float(x), float(y)) for i, (x, y) in enumerate(rng.uniform(size=(n, 2)))]


def _dcst(rng):
    cfg = DcstConfig(d_model=4, heads=2, d_ff=8, input_len=4, horizon=2, segments=[2, 4], grids=[[2, 2], [1, 1]])
    model = DcstModel(cfg, _sensors(rng, 5), seed=int(rng.integers(2**31)))
    for p in model.parameters():  # move LN gains/biases off their trivial initial values
        p.data += 0.1 * rng.standard_normal(p.shape)
    x = _p(rng, 2, 5, 4)
    r = rng.standard_normal((2, 5, 2))
    return (lambda: _proj(model.forward(x, AblationMode.FULL), r)), [x, *model.parameters()]


def _gnn(rng):
    n = 5
    adj = rng.uniform(size=(n, n)) * (rng.uniform(size=(n, n)) < 0.5)
    adj = np.maximum(adj, adj.T)
    np.fill_diagonal(adj, 0.0)
    model = GnnModel(GnnConfig(hidden=3, blocks=1, kernel=2, input_len=4, horizon=2), RoadGraph(adj), int(rng.integers(2**31)))
    for p in model.parameters():
        p.data += 0.1 * rng.standard_normal(p.shape)
    x = _p(rng, 2, n, 4)
    r = rng.standard_normal((2, n, 2))
    return (lambda: _proj(model.forward(x), r)), [x, *model.parameters()]


CASES: tuple[GradCase, ...] = (
    GradCase("add", True, _binary(ops.add)),
    GradCase("sub", True, _binary(ops.sub)),
    GradCase("mul", True, _binary(ops.mul)),
    GradCase("square", True, _unary(ops.square)),
    GradCase("abs", True, _abs),
    GradCase("tanh", True, _unary(ops.tanh)),
    GradCase("sigmoid", True, _unary(ops.sigmoid)),
    GradCase("gelu", True, _unary(ops.gelu)),
    GradCase("reshape_transpose", True, _shape_ops),
    GradCase("unfold", True, _unfold),
    GradCase("linear", False, _linear),
    GradCase("matmul", False, _matmul),
    GradCase("einsum", False, _einsum),
    GradCase("softmax", False, _softmax),
    GradCase("layer_norm", False, _layer_norm),
    GradCase("mae", False, _mae),
    GradCase("mse_distill_loss", False, _losses),
    GradCase("multi_head_attention", False, _attention),
    GradCase("mlp_block", False, _mlp),
    GradCase("spatial_scale_repr", False, _spatial),
    GradCase("temporal_scale_repr", False, _temporal),
    GradCase("dcst_forward", False, _dcst, max_coords=4),
    GradCase("gnn_forward", False, _gnn, max_coords=4),
)


@dataclass(frozen=True)
class GradResult:
    name: str
    seeds: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def run_case(case: GradCase, seeds: range) -> GradResult:
    worst = 0.0
    for s in seeds:
        rng = seeded_rng(s)
        fn, inputs = case.build(rng)
        worst = max(worst, grad_check(fn, inputs, max_coords=case.max_coords, rng=rng))
    return GradResult(case.name, len(seeds), worst, case.tol)


def run_all(seeds: range = range(20), cases=CASES) -> list[GradResult]:
    return [run_case(c, seeds) for c in cases]
