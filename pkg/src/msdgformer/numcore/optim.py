"""Named parameter container and the Adam update rule."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import UsageError
from .tensor import Tensor


class ParameterStore:
    """Ordered, named collection of trainable tensors.

    Insertion order is the canonical parameter order for the optimizer;
    checkpoints serialize by name. Names are unique.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise UsageError(f"duplicate parameter name {name!r}")
        if not t.requires_grad:
            raise UsageError(f"parameter {name!r} must require gradients")
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.size for t in self._params.values())


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(
        self,
        params: ParameterStore,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def adam_step(params: ParameterStore, state: AdamState, lr: float):
    """One bias-corrected Adam update over every parameter.

    Gradients must be populated; they are left untouched so the caller
    decides when to reset them.
    """
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise UsageError(f"parameter {name!r} has no gradient; run backward first")
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2) + eps
        p.data -= (lr / c1) * m / denom
