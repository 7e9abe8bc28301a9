"""Differentiable primitives over :class:`~dcst.diffcore.tensor.Tensor`."""
from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, make_result

__all__ = [
    "abs_",
    "add",
    "einsum",
    "gelu",
    "layer_norm",
    "linear",
    "matmul",
    "mean_all",
    "mul",
    "reshape",
    "sigmoid",
    "softmax",
    "square",
    "sub",
    "sum_all",
    "tanh",
    "transpose",
    "unfold_last2",
]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,), "square")


def abs_(x: Tensor) -> Tensor:
    return make_result(np.abs(x.data), (x,), lambda g: (np.sign(x.data) * g,), "abs")


def sum_all(x: Tensor) -> Tensor:
    return make_result(
        np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum"
    )


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    return make_result(
        np.asarray(x.data.mean()),
        (x,),
        lambda g: (np.full(x.shape, float(g) / n),),
        "mean",
    )


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (g.transpose(inv),),
        "transpose",
    )


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: ((1.0 - y * y) * g,), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(y, (x,), lambda g: (y * (1.0 - y) * g,), "sigmoid")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU; smooth everywhere."""
    v = x.data
    v2 = v * v
    t = v2 * 0.044715
    t += 1.0
    t *= v
    t *= _GELU_C
    np.tanh(t, out=t)
    y = t + 1.0
    y *= v
    y *= 0.5

    def grad(g):
        # d/dv = 0.5 (1 + t) + 0.5 v (1 - t^2) c (1 + 3 k v^2)
        d = v2 * (3 * 0.044715)
        d += 1.0
        d *= _GELU_C
        d *= v
        d *= 1.0 - t * t
        d += 1.0 + t
        d *= 0.5
        d *= g
        return (d,)

    return make_result(y, (x,), grad, "gelu")


def linear(x, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; leading axes are batch axes."""
    x = as_tensor(x)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias shape {b.shape} does not match weight shape {w.shape}")
    din, dout = w.shape
    x2 = x.data.reshape(-1, din)
    out = x2 @ w.data
    if b is not None:
        out += b.data
    out = out.reshape(x.shape[:-1] + (dout,))

    def grad(g):
        g2 = g.reshape(-1, dout)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, grad, "linear")


def matmul(a, b) -> Tensor:
    """Batched ``a @ b`` with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: cannot broadcast batch axes of {a.shape} and {b.shape}") from None

    def grad(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), grad, "matmul")


def _parse_einsum(spec: str) -> tuple[list[str], str]:
    lhs, out = spec.replace(" ", "").split("->")
    return lhs.split(","), out


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum with explicit index letters.

    Every index of an operand must also appear in the other operand or in the
    output; either operand may be a plain (constant) array.
    """
    a, b = as_tensor(a), as_tensor(b)
    (sa, sb), so = _parse_einsum(spec)
    for s, t in ((sa, a), (sb, b)):
        if len(s) != t.ndim:
            raise DimensionError(f"einsum {spec!r}: operand shape {t.shape} does not match {s!r}")
        missing = set(s) - set(so) - set(sb if s is sa else sa)
        if missing:
            raise DimensionError(f"einsum {spec!r}: index {sorted(missing)} would be reduced within one operand")
    try:
        out = np.einsum(spec, a.data, b.data, optimize=True)
    except ValueError as exc:
        raise DimensionError(f"einsum {spec!r} on shapes {a.shape}, {b.shape}: {exc}") from None

    def grad(g):
        ga = np.einsum(f"{so},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{so},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return make_result(np.asarray(out), (a, b), grad, "einsum")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), grad, "softmax")


def layer_norm(x, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def grad(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (
                gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        g2 = g.reshape(-1, d)
        gg = (g2 * xhat.reshape(-1, d)).sum(axis=0) if gain.requires_grad else None
        gb = g2.sum(axis=0) if bias.requires_grad else None
        return gx, gg, gb

    return make_result(y, (x, gain, bias), grad, "layer_norm")


def unfold_last2(x: Tensor, kernel: int) -> Tensor:
    """Sliding windows along axis -2: ``[..., T, C] -> [..., T-k+1, k*C]``.

    Window ``s`` concatenates rows ``s, s+1, ..., s+k-1`` in order.
    """
    t, c = x.shape[-2], x.shape[-1]
    if not 1 <= kernel <= t:
        raise DimensionError(f"unfold: kernel {kernel} invalid for length {t}")
    tout = t - kernel + 1
    out = np.concatenate([x.data[..., k : k + tout, :] for k in range(kernel)], axis=-1)

    def grad(g):
        gx = np.zeros(x.shape)
        for k in range(kernel):
            gx[..., k : k + tout, :] += g[..., k * c : (k + 1) * c]
        return (gx,)

    return make_result(out, (x,), grad, "unfold")
