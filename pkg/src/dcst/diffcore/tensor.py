"""Dense float64 tensors with tape-recorded reverse-mode gradients.

Operations only record themselves while a :class:`Tape` is active::

    with Tape() as tape:
        loss = mae(linear(x, w, b), y)
    backward(tape, loss)

Outside a tape every op is a plain numpy computation, which is how frozen
models and evaluation passes run.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "NonFiniteError",
    "Parameter",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "set_debug",
]

_ids = itertools.count(1)
_tape_stack: list["Tape"] = []
_debug = False


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf enters a tensor."""


def set_debug(flag: bool) -> None:
    """Check every op output for NaN/Inf when ``flag`` is true."""
    global _debug
    _debug = bool(flag)


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """A float64 array that may carry a reference onto the active tape."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, _check: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if _check:
            _check_finite(arr, "tensor creation")
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar, implemented in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self):
        from . import ops
        return ops.sum_all(self)


class Parameter(Tensor):
    """A learnable tensor with an accumulating gradient buffer.

    ``frozen`` parameters behave like constants: ops do not record them and
    ``backward`` never writes into their gradient.
    """

    __slots__ = ("grad", "id", "name", "frozen")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.id = next(_ids)
        self.name = name
        self.frozen = False

    def freeze(self) -> None:
        self.frozen = True
        self.requires_grad = False

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, id={self.id})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out: Tensor, parents: Sequence[Tensor], backward_fn: Callable):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of ops executed while the tape is active.

    Nodes are appended in execution order, which is already a topological
    order of the computation graph.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Iterable[np.ndarray | None]],
    what: str = "op",
) -> Tensor:
    """Wrap ``data`` as the output of an op and record it if a tape is live.

    ``backward_fn(grad_out)`` returns one gradient (or None) per parent.
    """
    if _debug:
        _check_finite(data, what)
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _check=False)
    if needs:
        tape.nodes.append(_Node(out, parents, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(p) into ``p.grad`` for every parameter on the tape."""
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    params: dict[int, Parameter] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if isinstance(parent, Parameter):
                params[key] = parent
    for key, p in params.items():
        p.grad += grads[key].reshape(p.shape)
