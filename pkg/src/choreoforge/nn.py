"""Minimal module system over :mod:`choreoforge.tensor`."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import CheckpointError
from .tensor import Tensor


class Module:
    """Base class; parameters are discovered from attributes.

    Tensors with ``requires_grad`` become parameters; ``Module`` attributes and
    lists of modules are walked recursively.  Names are dotted attribute paths.
    """

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[path] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(path + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{path}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        params = self.named_parameters()
        for name, p in params.items():
            key = prefix + name
            if key not in state:
                raise CheckpointError(f"checkpoint lacks parameter {key!r}")
            arr = np.asarray(state[key])
            if arr.shape != p.shape:
                raise CheckpointError(f"parameter {key!r}: checkpoint shape {arr.shape} != model {p.shape}")
            p.data = arr.astype(p.dtype).copy()
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(np.asarray(arr, dtype=T.DEFAULT_DTYPE), requires_grad=True)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False) -> None:
        scale = 0.0 if zero else math.sqrt(2.0 / (n_in + n_out))
        self.weight = _param(rng.normal(0.0, 1.0, (n_in, n_out)) * scale)
        self.bias = _param(np.zeros(n_out))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 zero: bool = False) -> None:
        scale = 0.0 if zero else math.sqrt(2.0 / (kernel * c_in + c_out))
        self.weight = _param(rng.normal(0.0, 1.0, (kernel, c_in, c_out)) * scale)
        self.bias = _param(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight) + self.bias


class MLP(Module):
    """Stack of dense layers with GELU between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, zero_last: bool = False) -> None:
        self.layers = [
            Dense(a, b, rng, zero=zero_last and i == len(sizes) - 2)
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.gelu(x)
        return x


class SelfAttention(Module):
    """Single-head pre-norm self-attention over the frame axis with a residual."""

    def __init__(self, dim: int, rng: np.random.Generator) -> None:
        self.q = Dense(dim, dim, rng)
        self.k = Dense(dim, dim, rng)
        self.v = Dense(dim, dim, rng)
        self.o = Dense(dim, dim, rng, zero=True)
        self.dim = dim

    def forward(self, x: Tensor) -> Tensor:
        h = T.layer_norm(x)
        q, k, v = self.q(h), self.k(h), self.v(h)
        att = T.softmax((q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.dim)))
        return x + self.o(att @ v)


class TemporalEncoder(Module):
    """``(B, T, C)`` sequences -> ``(B, out_dim)``: two GELU conv layers, mean over time, dense."""

    def __init__(self, in_dim: int, width: int, out_dim: int, rng: np.random.Generator, kernel: int = 5) -> None:
        self.conv1 = Conv1d(in_dim, width, kernel, rng)
        self.conv2 = Conv1d(width, width, kernel, rng)
        self.head = Dense(width, out_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = T.gelu(self.conv1(x))
        h = T.gelu(self.conv2(h))
        return self.head(T.mean(h, axis=-2))


STD_FLOOR = 1e-2


@dataclass
class Normalizer:
    """Per-column standardization with a floor on the standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(np.zeros(dim, np.float32), np.ones(dim, np.float32))

    @classmethod
    def fit(cls, rows: np.ndarray) -> "Normalizer":
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, np.shape(rows)[-1])
        return cls(rows.mean(axis=0).astype(np.float32),
                   np.maximum(rows.std(axis=0), STD_FLOOR).astype(np.float32))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x) - self.mean) / self.std).astype(np.float32)

    def invert(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z) * self.std + self.mean).astype(np.float32)
