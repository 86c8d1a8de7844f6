"""Dense numpy-backed tensors with a reverse-mode gradient tape.

Every differentiable op appends one record to the calling thread's
:class:`GradTape` whenever at least one input requires a gradient.
:func:`backward` replays the tape in reverse creation order, hands each
record its vector-Jacobian product, and leaves the results on the leaf
tensors' ``.grad``.  The tape is consumed by a backward pass.

Storage defaults to float32; reductions accumulate in float64.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ContractError, NumericError

DEFAULT_DTYPE = np.float32

_GELU_C = math.sqrt(2.0 / math.pi)


class _Record(NamedTuple):
    op: str
    out: "Tensor"
    inputs: tuple
    vjp: Callable


class GradTape:
    """Ordered record of differentiable ops for one thread."""

    def __init__(self) -> None:
        self.records: list[_Record] = []
        # op names in the order the last backward pass visited them
        self.last_replay: list[str] = []

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, out: "Tensor", inputs: tuple, vjp: Callable) -> None:
        self.records.append(_Record(op, out, inputs, vjp))

    def clear(self) -> None:
        self.records = []

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.records:
            raise ContractError("backward called on an empty tape")
        records = self.records
        produced = {id(r.out) for r in records}
        leaves: dict[int, Tensor] = {}
        for r in records:
            for t in r.inputs:
                if t.requires_grad and id(t) not in produced:
                    leaves.setdefault(id(t), t)

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        replay = []
        for r in reversed(records):
            replay.append(r.op)
            g = grads.pop(id(r.out), None)
            if g is None:
                continue
            for t, gi in zip(r.inputs, r.vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                gi = _unbroadcast(gi, t.shape)
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
        self.last_replay = replay
        self.clear()


_local = threading.local()


def _state():
    if not hasattr(_local, "tape"):
        _local.tape = GradTape()
        _local.enabled = True
        _local.check_finite = True
    return _local


def current_tape() -> GradTape:
    return _state().tape


def grad_enabled() -> bool:
    return _state().enabled


@contextmanager
def no_grad():
    st = _state()
    prev = st.enabled
    st.enabled = False
    try:
        yield
    finally:
        st.enabled = prev


@contextmanager
def finite_checks(enabled: bool):
    """Toggle the per-op finiteness check on op inputs for this thread."""
    st = _state()
    prev = st.check_finite
    st.check_finite = enabled
    try:
        yield
    finally:
        st.check_finite = prev


class Tensor:
    """An n-dimensional float array that can take part in autodiff."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None) -> None:
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def validate(self) -> "Tensor":
        """Raise NumericError when any entry is NaN or infinite."""
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"tensor of shape {self.shape} holds non-finite values")
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def _not_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


# ---------------------------------------------------------------------------
# plumbing

def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _check_inputs(*ts: Tensor) -> None:
    if not _state().check_finite:
        return
    for t in ts:
        s = float(np.sum(t.data, dtype=np.float64))
        if not math.isfinite(s):
            raise NumericError(f"non-finite input of shape {t.shape}")


def _make(op: str, data: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    st = _state()
    rg = st.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data)
    if rg:
        out.requires_grad = True
        st.tape.record(op, out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = as_tensor(b, like=a)
    else:
        b = as_tensor(b)
        a = as_tensor(a, like=b)
    return a, b


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``; consumes the tape."""
    current_tape().backward(loss)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    _check_inputs(a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    _check_inputs(a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")
    _check_inputs(a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    _check_inputs(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make("div", out, (a, b), lambda g: (g / bd, -g * out / bd))


def power(a: Tensor, exponent: float) -> Tensor:
    _check_inputs(a)
    x = a.data
    p = float(exponent)
    return _make("pow", x ** p, (a,), lambda g: (g * p * x ** (p - 1.0),))


def sqrt(a: Tensor) -> Tensor:
    _check_inputs(a)
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    _check_inputs(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    _check_inputs(a)
    x = a.data
    return _make("log", np.log(x), (a,), lambda g: (g / x,))


# ---------------------------------------------------------------------------
# activations

def relu(a: Tensor) -> Tensor:
    _check_inputs(a)
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    _check_inputs(a)
    x = a.data
    x2 = x * x  # explicit products: float powers are far slower
    th = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + th)

    def vjp(g):
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * d,)

    return _make("gelu", out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    _check_inputs(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    _check_inputs(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out ** 2),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    _check_inputs(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True, dtype=np.float64).astype(a.dtype)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make("softmax", out, (a,), vjp)


def log_softmax(a: Tensor) -> Tensor:
    _check_inputs(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True, dtype=np.float64)).astype(a.dtype)
    out = z - lse
    sm = np.exp(out)

    def vjp(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", out, (a,), vjp)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    _check_inputs(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True, dtype=np.float64).astype(x.dtype)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True, dtype=np.float64).astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make("layer_norm", xhat, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra and structure

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")
    _check_inputs(a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_inputs(a)
    x = a.data
    out = np.asarray(x.sum(axis=axis, keepdims=keepdims, dtype=np.float64), dtype=x.dtype)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make("sum", out, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = a.data
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[i] for i in axes]))
    _check_inputs(a)
    out = np.asarray(x.mean(axis=axis, keepdims=keepdims, dtype=np.float64), dtype=x.dtype)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return _make("mean", out, (a,), vjp)


def mse(a, b) -> Tensor:
    """Mean squared error over all elements; shapes must match exactly."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ContractError(f"mse: shapes {a.shape} and {b.shape} differ")
    _check_inputs(a, b)
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.mean(np.square(diff, dtype=np.float64)), dtype=a.dtype)

    def vjp(g):
        ga = (2.0 / n) * g * diff
        return ga, -ga

    return _make("mse", out, (a, b), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(src),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _make("swapaxes", np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def getitem(a: Tensor, index) -> Tensor:
    src_shape, dtype = a.shape, a.dtype

    def vjp(g):
        full = np.zeros(src_shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _make("getitem", a.data[index], (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat: empty input list")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ContractError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    _check_inputs(*ts)
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make("concat", np.concatenate([t.data for t in ts], axis=ax), tuple(ts), vjp)


def conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Temporal convolution with zero 'same' padding.

    ``x`` is ``(..., T, C_in)``, ``w`` is ``(K, C_in, C_out)`` with odd ``K``;
    the result is ``(..., T, C_out)``.  Bias is added separately.
    """
    if w.ndim != 3 or w.shape[0] % 2 == 0:
        raise ContractError(f"conv1d: kernel must be (K, C_in, C_out) with odd K, got {w.shape}")
    if x.ndim < 2 or x.shape[-1] != w.shape[1]:
        raise ContractError(f"conv1d: input {x.shape} does not match kernel {w.shape}")
    _check_inputs(x, w)
    k, cin, cout = w.shape
    t = x.shape[-2]
    half = k // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(half, half), (0, 0)]
    xp = np.pad(x.data, pad)
    cols = np.concatenate([xp[..., i:i + t, :] for i in range(k)], axis=-1)  # (..., T, K*Cin)
    wr = w.data.reshape(k * cin, cout)

    def vjp(g):
        gw = gx = None
        if w.requires_grad:
            gw = np.tensordot(cols.reshape(-1, k * cin), g.reshape(-1, cout), axes=(0, 0))
            gw = gw.reshape(k, cin, cout)
        if x.requires_grad:
            gcols = g @ wr.T
            gxp = np.zeros(xp.shape, dtype=gcols.dtype)
            for i in range(k):
                gxp[..., i:i + t, :] += gcols[..., i * cin:(i + 1) * cin]
            gx = gxp[..., half:half + t, :]
        return gx, gw

    return _make("conv1d", cols @ wr, (x, w), vjp)


# ---------------------------------------------------------------------------
# composites

def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ContractError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    lp = log_softmax(logits)
    picked = getitem(lp, (np.arange(len(labels)), labels))
    return mean(picked) * -1.0


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Cosine similarity along the last axis."""
    if a.shape != b.shape:
        raise ContractError(f"cosine_similarity: shapes {a.shape} and {b.shape} differ")
    dot = tsum(a * b, axis=-1)
    na = sqrt(tsum(a * a, axis=-1) + eps)
    nb = sqrt(tsum(b * b, axis=-1) + eps)
    return dot / (na * nb)
