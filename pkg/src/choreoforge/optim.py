"""Gradient-descent optimizers over a parameter registry."""
from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .errors import ContractError
from .tensor import Tensor


def _registry(params) -> dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {str(i): p for i, p in enumerate(params)}


class SGD:
    """Plain gradient descent: ``p <- p - lr * grad``.

    With ``momentum > 0`` a heavy-ball velocity is kept per parameter; the
    default of 0 gives the plain update.
    """

    def __init__(self, params: Mapping[str, Tensor] | Iterable[Tensor], lr: float = 1e-3,
                 momentum: float = 0.0) -> None:
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        self.params = _registry(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._vel: dict[str, np.ndarray] = {}

    def _check(self) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise ContractError(f"no gradient for parameter(s) {missing[:5]}")

    def step(self) -> None:
        self._check()
        for name, p in self.params.items():
            g = p.grad
            if self.momentum:
                v = self._vel.get(name)
                v = g if v is None else self.momentum * v + g
                self._vel[name] = v
                g = v
            p.data = (p.data - self.lr * g).astype(p.dtype)
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class Adam(SGD):
    """Adaptive-moment variant with the same step contract."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self._check()
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self._m.get(name, np.zeros_like(g))
            v = self._v.get(name, np.zeros_like(g))
            m = self.b1 * m + (1 - self.b1) * g
            v = self.b2 * v + (1 - self.b2) * g * g
            self._m[name], self._v[name] = m, v
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        self.zero_grad()
