"""Full-body dance generation: body expert, hand expert, refine net.

The body expert denoises the 69-column body slice conditioned on the music
features.  The hand expert denoises the 90-column hand slice conditioned on
the body expert's clean-sample prediction concatenated with the music
features.  Both run in a per-column standardized motion space.  The refine
net mixes the assembled 159-column prediction through a gated temporal
convolution: ``out = raw + sigmoid(w) * conv(raw)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint, diffusion, nn
from . import tensor as T
from .errors import CheckpointError, ContractError
from .motion import BODY_DIM, FEATURE_DIM, HAND_DIM, MotionFragment
from .nn import Normalizer
from .optim import SGD, Adam

MUSIC_DIM = 35


@dataclass
class FDGNConfig:
    hidden: int = 256
    music_hidden: int = 128
    step_dim: int = 64
    trunk: str = "mlp"  # "mlp" or "attention"
    diffusion_steps: int = diffusion.DEFAULT_STEPS
    beta_start: float | None = None  # None: rescaled 1e-4..0.02 ramp
    beta_end: float | None = None

    def schedule(self) -> diffusion.NoiseSchedule:
        if self.beta_start is None or self.beta_end is None:
            return diffusion.default_schedule(self.diffusion_steps)
        return diffusion.make_schedule(self.diffusion_steps, self.beta_start, self.beta_end)


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 0.05
    batch: int = 16
    seed: int = 0
    optimizer: str = "sgd"  # or "adam"
    momentum: float = 0.9
    probe_batch: int = 64
    # desk-scale values; the full-scale run used epochs=200, lr=2e-4, batch=2048


def step_embedding(steps: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10_000.0) * np.arange(half) / half)
    ang = np.asarray(steps, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)


class ExpertDenoiser(nn.Module):
    """Per-frame x0 predictor: ``(B, T, D)`` noisy slice + ``(B, T, C)`` condition -> ``(B, T, D)``."""

    def __init__(self, x_dim: int, cond_dim: int, cfg: FDGNConfig, rng: np.random.Generator) -> None:
        h = cfg.hidden
        self.x_dim, self.cond_dim, self.step_dim = x_dim, cond_dim, cfg.step_dim
        self.cond_enc = nn.MLP([cond_dim, cfg.music_hidden, cfg.music_hidden, h], rng)
        self.step_enc = nn.MLP([cfg.step_dim, h, h], rng)
        self.x_in = nn.Dense(x_dim, h, rng)
        self.attn = nn.SelfAttention(h, rng) if cfg.trunk == "attention" else None
        self.trunk = [nn.Dense(h, h, rng), nn.Dense(h, h, rng)]
        self.out = nn.Dense(h, x_dim, rng, zero=True)

    def forward(self, x: T.Tensor, steps: np.ndarray, cond) -> T.Tensor:
        cond = T.as_tensor(cond)
        if x.ndim != 3 or x.shape[-1] != self.x_dim:
            raise ContractError(f"expert expects (B, T, {self.x_dim}) input, got {x.shape}")
        if cond.shape[:2] != x.shape[:2] or cond.shape[-1] != self.cond_dim:
            raise ContractError(f"condition {cond.shape} does not match input {x.shape}")
        e = self.step_enc(T.Tensor(step_embedding(steps, self.step_dim)))
        h = self.x_in(x) + self.cond_enc(cond) + T.reshape(e, (x.shape[0], 1, -1))
        if self.attn is not None:
            h = self.attn(h)
        for layer in self.trunk:
            h = T.gelu(layer(h))
        return self.out(h)


class RefineNet(nn.Module):
    def __init__(self, rng: np.random.Generator, kernel: int = 3) -> None:
        self.conv = nn.Conv1d(FEATURE_DIM, FEATURE_DIM, kernel, rng, zero=True)
        self.gate = T.Tensor(np.zeros(FEATURE_DIM, np.float32), requires_grad=True)

    def forward(self, raw: T.Tensor) -> T.Tensor:
        return raw + T.sigmoid(self.gate) * self.conv(raw)


def assemble(body_pred, hand_pred, refine: RefineNet, fps: float = 30.0) -> MotionFragment:
    """Concatenate body and hand predictions and pass them through the refine net."""
    body = np.asarray(body_pred, dtype=np.float32)
    hand = np.asarray(hand_pred, dtype=np.float32)
    if body.ndim != 2 or hand.ndim != 2 or body.shape[1] != BODY_DIM or hand.shape[1] != HAND_DIM \
            or body.shape[0] != hand.shape[0]:
        raise ContractError(f"assemble needs (T, {BODY_DIM}) and (T, {HAND_DIM}); got {body.shape}, {hand.shape}")
    with T.no_grad():
        out = refine(T.Tensor(np.concatenate([body, hand], axis=1)))
    return MotionFragment(out.data, fps)


class FDGN(nn.Module):
    def __init__(self, cfg: FDGNConfig | None = None, seed: int = 0) -> None:
        self.cfg = cfg or FDGNConfig()
        if self.cfg.trunk not in ("mlp", "attention"):
            raise ContractError(f"unknown trunk type {self.cfg.trunk!r}")
        rng = np.random.default_rng(seed)
        self.body = ExpertDenoiser(BODY_DIM, MUSIC_DIM, self.cfg, rng)
        self.hand = ExpertDenoiser(HAND_DIM, BODY_DIM + MUSIC_DIM, self.cfg, rng)
        self.refine = RefineNet(rng)
        self.schedule = self.cfg.schedule()
        self.music_norm = Normalizer.identity(MUSIC_DIM)
        self.motion_norm = Normalizer.identity(FEATURE_DIM)

    def fit_normalizers(self, music: np.ndarray, frames: np.ndarray) -> None:
        self.music_norm = Normalizer.fit(music)
        self.motion_norm = Normalizer.fit(frames)

    # -- denoising in normalized space --------------------------------------
    def joint_denoiser(self, x: T.Tensor, steps: np.ndarray, music: np.ndarray) -> T.Tensor:
        """Full 159-column denoiser: body first, its prediction conditions the hands."""
        music_t = T.Tensor(music)
        body = self.body(x[:, :, :BODY_DIM], steps, music_t)
        hand_cond = T.concat([body, music_t], axis=-1)
        hand = self.hand(x[:, :, BODY_DIM:], steps, hand_cond)
        return T.concat([body, hand], axis=-1)

    def losses(self, frames: np.ndarray, music: np.ndarray, rng: np.random.Generator) -> dict[str, T.Tensor]:
        """Body, hand and refine losses for one batch of raw ``(B, T, 159)`` frames."""
        z0 = self.motion_norm.apply(frames)
        m = self.music_norm.apply(music)
        zb, zh = z0[:, :, :BODY_DIM], z0[:, :, BODY_DIM:]
        body_loss, body = diffusion.training_loss(self.body, zb, T.Tensor(m), self.schedule, rng,
                                                  return_prediction=True)
        # teacher forcing: the clean body slice conditions the hand expert
        hand_cond = T.Tensor(np.concatenate([zb, m], axis=-1))
        hand_loss, hand = diffusion.training_loss(self.hand, zh, hand_cond, self.schedule, rng,
                                                  return_prediction=True)
        raw = T.concat([body, hand], axis=-1)
        raw = raw * T.Tensor(self.motion_norm.std) + T.Tensor(self.motion_norm.mean)
        refine_loss = T.mse(self.refine(raw), T.Tensor(np.asarray(frames, np.float32)))
        total = body_loss + hand_loss + refine_loss
        return {"total": total, "body": body_loss, "hand": hand_loss, "refine": refine_loss}

    # -- generation ----------------------------------------------------------
    def sample(self, music: np.ndarray, rngs: Sequence[np.random.Generator]) -> list[MotionFragment]:
        """One fragment per RNG stream for a ``(T, 35)`` music feature matrix."""
        music = np.asarray(music, dtype=np.float32)
        if music.ndim != 2 or music.shape[1] != MUSIC_DIM:
            raise ContractError(f"music features must be (T, {MUSIC_DIM}), got {music.shape}")
        b, t = len(rngs), music.shape[0]
        m = np.broadcast_to(self.music_norm.apply(music), (b, t, MUSIC_DIM))
        z = diffusion.reverse_sample(lambda x, s, c: self.joint_denoiser(x, s, c), m, self.schedule,
                                     list(rngs), (b, t, FEATURE_DIM))
        raw = self.motion_norm.invert(z)
        return [assemble(r[:, :BODY_DIM], r[:, BODY_DIM:], self.refine) for r in raw]

    # -- persistence ---------------------------------------------------------
    def full_state(self) -> dict[str, np.ndarray]:
        state = {f"param.{k}": v for k, v in self.state_dict().items()}
        state["buffer.music_mean"] = self.music_norm.mean
        state["buffer.music_std"] = self.music_norm.std
        state["buffer.motion_mean"] = self.motion_norm.mean
        state["buffer.motion_std"] = self.motion_norm.std
        return state

    def save(self, path: str | Path) -> None:
        checkpoint.save_model(path, "fdgn", asdict(self.cfg), self.full_state())

    @classmethod
    def load(cls, path: str | Path) -> "FDGN":
        meta = checkpoint.read_meta(path, "fdgn")
        model = cls(FDGNConfig(**meta["config"]))
        state = checkpoint.load(path)
        model.load_state_dict(state, prefix="param.")
        try:
            model.music_norm = Normalizer(state["buffer.music_mean"], state["buffer.music_std"])
            model.motion_norm = Normalizer(state["buffer.motion_mean"], state["buffer.motion_std"])
        except KeyError as exc:
            raise CheckpointError(f"checkpoint {path} lacks buffer {exc}") from None
        return model


@dataclass
class TrainResult:
    model: FDGN
    history: list[dict[str, float]] = field(default_factory=list)
    probe_initial: dict[str, float] = field(default_factory=dict)
    probe_final: dict[str, float] = field(default_factory=dict)


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(params, lr=cfg.lr, momentum=cfg.momentum)
    if cfg.optimizer == "adam":
        return Adam(params, lr=cfg.lr)
    raise ContractError(f"unknown optimizer {cfg.optimizer!r}")


def _probe(model: FDGN, frames: np.ndarray, music: np.ndarray, seed: int) -> dict[str, float]:
    with T.no_grad():
        parts = model.losses(frames, music, np.random.default_rng([seed, 12345]))
    return {k: v.item() for k, v in parts.items()}


def train_fdgn(music: Sequence[np.ndarray], fragments: Sequence[MotionFragment],
               cfg: TrainConfig | None = None, model_cfg: FDGNConfig | None = None) -> TrainResult:
    """Jointly train both experts and the refine net on aligned ``(X, Y)`` pairs.

    The per-batch objective is body loss + hand loss + refine loss.  A fixed
    probe batch (fixed steps and noise) is scored before and after training.
    """
    cfg = cfg or TrainConfig()
    if len(music) == 0 or len(music) != len(fragments):
        raise ContractError(f"need a non-empty aligned dataset, got {len(music)} music / {len(fragments)} motion")
    x_music = np.stack([np.asarray(m, np.float32) for m in music])
    x_motion = np.stack([f.frames for f in fragments])
    model = FDGN(model_cfg, seed=cfg.seed)
    model.fit_normalizers(x_music, x_motion)
    opt = make_optimizer(model.named_parameters(), cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    probe_idx = np.random.default_rng([cfg.seed, 2]).choice(len(x_music), size=min(cfg.probe_batch, len(x_music)),
                                                            replace=False)
    result = TrainResult(model)
    result.probe_initial = _probe(model, x_motion[probe_idx], x_music[probe_idx], cfg.seed)
    with T.finite_checks(False):
        for _ in range(cfg.steps):
            idx = rng.integers(0, len(x_music), size=cfg.batch)
            parts = model.losses(x_motion[idx], x_music[idx], rng)
            parts["total"].validate()
            T.backward(parts["total"])
            opt.step()
            result.history.append({k: v.item() for k, v in parts.items()})
    result.probe_final = _probe(model, x_motion[probe_idx], x_music[probe_idx], cfg.seed)
    return result


def generate_candidates(model: FDGN, music: np.ndarray, m: int, seed: int, stream: int = 0) -> list[MotionFragment]:
    """``m`` fragments for one clip; candidate ``i`` draws only from RNG stream ``(seed, stream, i)``."""
    if m < 1:
        raise ContractError(f"need at least one candidate, got {m}")
    rngs = [np.random.default_rng([seed, stream, i]) for i in range(m)]
    return model.sample(music, rngs)
