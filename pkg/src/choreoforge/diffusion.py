"""DDPM machinery: schedule, forward noising, x0-prediction loss, ancestral sampler.

A *denoiser* is any callable ``denoiser(x_s, steps, cond) -> Tensor`` where
``x_s`` is a ``(B, T, D)`` Tensor, ``steps`` an int array of shape ``(B,)``
with values in ``1..S``, and the result is the predicted clean sample with
the same shape as ``x_s``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError

Denoiser = Callable[[T.Tensor, np.ndarray, object], T.Tensor]

DEFAULT_STEPS = 50


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return self.betas.size

    def alpha_bar(self, s) -> np.ndarray:
        """``alpha_bar`` at 1-based step(s) ``s``; step 0 maps to 1."""
        s = np.asarray(s)
        padded = np.concatenate([[1.0], self.alpha_bars])
        return padded[s]


def make_schedule(steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta ramp with the running product of alphas."""
    if steps < 1:
        raise ContractError(f"schedule needs at least one step, got {steps}")
    if not 0 < beta_start <= beta_end < 1:
        raise ContractError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.empty(steps)
    acc = 1.0
    for i, a in enumerate(alphas):
        acc = acc * a
        alpha_bars[i] = acc
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(betas, alphas, alpha_bars)


def default_schedule(steps: int = DEFAULT_STEPS) -> NoiseSchedule:
    """The 1e-4..0.02 ramp of a 1000-step chain, rescaled to ``steps`` steps.

    Rescaling keeps ``alpha_bar_S`` near zero so the chain still ends close
    to N(0, I) when ``steps`` is small.
    """
    scale = 1000.0 / steps
    return make_schedule(steps, min(1e-4 * scale, 0.999), min(0.02 * scale, 0.999))


def _per_item(values: np.ndarray, ndim: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return values.reshape(values.shape + (1,) * (ndim - values.ndim))


def forward_diffuse(x0, s, eps, sched: NoiseSchedule) -> np.ndarray:
    """``x_s = sqrt(abar_s) x0 + sqrt(1 - abar_s) eps``.

    ``s`` is a scalar or one step per leading batch item.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ContractError(f"forward_diffuse: x0 {x0.shape} and eps {eps.shape} differ")
    s = np.asarray(s)
    if np.any(s < 1) or np.any(s > sched.steps):
        raise ContractError(f"diffusion step must lie in 1..{sched.steps}")
    ab = _per_item(sched.alpha_bar(s), x0.ndim) if s.ndim else sched.alpha_bar(s)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def training_loss(denoiser: Denoiser, x0: np.ndarray, cond, sched: NoiseSchedule,
                  rng: np.random.Generator, return_prediction: bool = False):
    """Monte-Carlo x0-prediction loss ``||x0 - denoiser(x_s, s, cond)||^2`` (mean over elements).

    Steps are uniform on ``1..S`` per batch item.  With ``return_prediction``
    the denoiser output is returned alongside the loss.
    """
    x0 = np.asarray(x0)
    steps = rng.integers(1, sched.steps + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    xs = forward_diffuse(x0, steps, eps, sched)
    pred = denoiser(T.Tensor(xs.astype(np.float32)), steps, cond)
    loss = T.mse(pred, T.Tensor(x0.astype(np.float32)))
    return (loss, pred) if return_prediction else loss


def _normal(rngs, shape) -> np.ndarray:
    if isinstance(rngs, np.random.Generator):
        return rngs.standard_normal(shape)
    if len(rngs) != shape[0]:
        raise ContractError(f"{len(rngs)} RNG streams for a batch of {shape[0]}")
    return np.stack([r.standard_normal(shape[1:]) for r in rngs])


def posterior_coefficients(sched: NoiseSchedule, s: int) -> tuple[float, float, float]:
    """Coefficients of ``q(x_{s-1} | x_s, x0)``: (x0 weight, x_s weight, variance)."""
    ab = sched.alpha_bar(s)
    ab_prev = sched.alpha_bar(s - 1)
    beta = sched.betas[s - 1]
    alpha = sched.alphas[s - 1]
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab)
    cs = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)
    var = (1.0 - ab_prev) / (1.0 - ab) * beta
    return float(c0), float(cs), float(var)


def reverse_sample(denoiser: Denoiser, cond, sched: NoiseSchedule,
                   rng: np.random.Generator | Sequence[np.random.Generator],
                   shape: tuple[int, ...]) -> np.ndarray:
    """Ancestral sampling from pure noise down to an x0 estimate.

    ``rng`` may be one generator or one per batch item (``shape[0]`` of
    them), in which case every item's noise comes only from its own stream.
    """
    x = _normal(rng, shape)
    with T.no_grad():
        for s in range(sched.steps, 0, -1):
            steps = np.full(shape[0], s)
            x0_hat = np.asarray(denoiser(T.Tensor(x.astype(np.float32)), steps, cond).data, dtype=np.float64)
            if x0_hat.shape != x.shape:
                raise ContractError(f"denoiser returned {x0_hat.shape}, expected {x.shape}")
            if s == 1:
                x = x0_hat
                break
            c0, cs, var = posterior_coefficients(sched, s)
            x = c0 * x0_hat + cs * x + np.sqrt(var) * _normal(rng, shape)
    return x
