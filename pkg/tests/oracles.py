"""Independent reference routines used by the tests.

Nothing here imports the code paths it checks.
"""
from __future__ import annotations

import math

import numpy as np

from choreoforge import tensor as T


def central_difference(f, arrays, h=1e-4):
    """Numeric gradient of scalar ``f(*arrays)`` w.r.t. every array (float64)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            fp = f(*arrays)
            a[idx] = old - h
            fm = f(*arrays)
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def gradcheck(op, arrays, rng, h=1e-4):
    """Max relative error between tape gradients and central differences.

    The scalar probed is ``sum(op(*inputs) * R)`` with a fixed random ``R``,
    so every output entry's vector-Jacobian product is exercised.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    with T.no_grad():
        ref = op(*[T.Tensor(a) for a in arrays]).data
    r = rng.normal(size=ref.shape)

    def scalar(*arrs):
        with T.no_grad():
            return float(np.sum(op(*[T.Tensor(a) for a in arrs]).data * r))

    ts = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*ts)
    loss = T.tsum(out * T.Tensor(r))
    T.backward(loss)
    num = central_difference(scalar, arrays, h)
    worst = 0.0
    for t, n in zip(ts, num):
        denom = max(np.max(np.abs(t.grad)), np.max(np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(t.grad - n)) / denom))
    return worst


def axis_angle_matrix(v):
    """Rodrigues rotation matrix built directly from the exponential series terms."""
    v = np.asarray(v, dtype=np.float64)
    theta = math.sqrt(float(v @ v))
    if theta < 1e-12:
        return np.eye(3)
    k = v / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * kx @ kx


def brute_argmax(values):
    best, best_i = -math.inf, -1
    for i, v in enumerate(values):
        if v > best:
            best, best_i = v, i
    return best_i


def frechet_1d(m1, s1, m2, s2):
    """Closed-form Fréchet distance between N(m1, s1^2) and N(m2, s2^2)."""
    return (m1 - m2) ** 2 + (s1 - s2) ** 2


def sqrtm_psd(a):
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_reference(mu1, s1, mu2, s2):
    r1 = sqrtm_psd(s1)
    c = r1 @ s2 @ r1
    return float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2 * np.trace(sqrtm_psd(c)))
