"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tape, Tensor, backward

STEP = 1e-6


def numeric_grad(fn: Callable[[], Tensor], p: Parameter, index, step: float = STEP) -> float:
    orig = p.data[index]
    p.data[index] = orig + step
    plus = float(fn().data)
    p.data[index] = orig - step
    minus = float(fn().data)
    p.data[index] = orig
    return (plus - minus) / (2.0 * step)


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Parameter],
    step: float = STEP,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape and central-difference gradients.

    ``fn`` must rebuild its scalar output from the current values of
    ``inputs``. Per coordinate the error is
    ``|a - n| / max(|a|, |n|, 1e-8)``. With ``max_coords`` set, at most that
    many coordinates per input are sampled (without replacement) by ``rng``.
    """
    for p in inputs:
        p.zero_grad()
    with Tape() as tape:
        out = fn()
    backward(tape, out)
    analytic = [p.grad.copy() for p in inputs]
    for p in inputs:
        p.zero_grad()

    worst = 0.0
    for p, a in zip(inputs, analytic):
        flat = np.arange(p.size)
        if max_coords is not None and p.size > max_coords:
            flat = (rng or np.random.default_rng(0)).choice(p.size, size=max_coords, replace=False)
        for f in flat:
            idx = np.unravel_index(int(f), p.shape)
            n = numeric_grad(fn, p, idx, step)
            an = float(a[idx])
            err = abs(an - n) / max(abs(an), abs(n), 1e-8)
            worst = max(worst, err)
    return worst
