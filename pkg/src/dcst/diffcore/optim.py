from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import Parameter


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam with bias correction. Frozen parameters are rejected up front."""

    def __init__(self, params: Iterable[Parameter], config: AdamConfig = AdamConfig()):
        self.params = list(params)
        frozen = [p.name or p.id for p in self.params if p.frozen]
        if frozen:
            raise ValueError(f"optimizer given frozen parameters: {frozen}")
        self.config = config
        self.step_count = 0
        self._m = {p.id: np.zeros_like(p.data) for p in self.params}
        self._v = {p.id: np.zeros_like(p.data) for p in self.params}

    @property
    def param_ids(self) -> set[int]:
        return {p.id for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        c = self.config
        self.step_count += 1
        t = self.step_count
        corr1 = 1.0 - c.beta1**t
        corr2 = 1.0 - c.beta2**t
        for p in self.params:
            m, v = self._m[p.id], self._v[p.id]
            m *= c.beta1
            m += (1.0 - c.beta1) * p.grad
            v *= c.beta2
            v += (1.0 - c.beta2) * p.grad * p.grad
            p.data -= c.lr * (m / corr1) / (np.sqrt(v / corr2) + c.eps)
        self.zero_grad()
