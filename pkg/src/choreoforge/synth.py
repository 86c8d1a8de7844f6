"""Deterministic genre-labeled music/dance pairs.

Each genre has a tempo, a tone, and fixed per-joint sinusoid tables.  The
music is the genre tone under a beat-synchronous decaying envelope plus a
click on every beat; every joint oscillates at a multiple of the beat
frequency, phase-locked to the same clicks, so music and motion pair up.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import audio, motion
from .errors import ContractError

PITCHES_HZ = [220.0, 261.63, 329.63, 392.0, 466.16, 293.66, 349.23, 415.30]


@dataclass(frozen=True)
class GenreSpec:
    genre_id: int
    tempo: float
    tone_hz: float
    root_amp: np.ndarray  # (3,)
    body_amp: np.ndarray  # (22, 3)
    body_phase: np.ndarray
    hand_amp: np.ndarray  # (30, 3)
    hand_phase: np.ndarray
    hand_mult: np.ndarray  # (30, 3) beat-frequency multiples
    noise: float = 0.005

    def __post_init__(self) -> None:
        if not 60 <= self.tempo <= 180:
            raise ContractError(f"tempo must lie in [60, 180] BPM, got {self.tempo}")
        for name in ("body_amp", "hand_amp"):
            amp = np.abs(getattr(self, name))
            if np.any(np.linalg.norm(amp, axis=1) + 4 * self.noise >= math.pi):
                raise ContractError(f"{name} lets an axis-angle magnitude reach pi")

    @property
    def beat_period(self) -> float:
        return 60.0 / self.tempo

    def summary(self) -> dict:
        return {"genre": self.genre_id, "tempo": self.tempo, "tone_hz": self.tone_hz}


def make_genre(genre_id: int, tempo: float, tone_hz: float, seed: int = 0, noise: float = 0.005) -> GenreSpec:
    rng = np.random.default_rng([seed, genre_id, 7])
    return GenreSpec(
        genre_id=genre_id,
        tempo=tempo,
        tone_hz=tone_hz,
        root_amp=rng.uniform(0.02, 0.12, 3),
        body_amp=rng.uniform(0.05, 0.6, (motion.N_BODY_JOINTS, 3)),
        body_phase=rng.uniform(0, 2 * math.pi, (motion.N_BODY_JOINTS, 3)),
        hand_amp=rng.uniform(0.05, 0.4, (motion.N_JOINTS - motion.N_BODY_JOINTS, 3)),
        hand_phase=rng.uniform(0, 2 * math.pi, (motion.N_JOINTS - motion.N_BODY_JOINTS, 3)),
        hand_mult=rng.integers(1, 3, (motion.N_JOINTS - motion.N_BODY_JOINTS, 3)).astype(float),
        noise=noise,
    )


def default_genres(n: int = 4, seed: int = 0) -> list[GenreSpec]:
    tempos = np.linspace(80.0, 160.0, n) if n > 1 else np.array([120.0])
    return [make_genre(g, float(tempos[g]), PITCHES_HZ[g % len(PITCHES_HZ)] * (1 + g // len(PITCHES_HZ)), seed)
            for g in range(n)]


def _click(sr: int) -> np.ndarray:
    n = int(0.012 * sr)
    t = np.arange(n) / sr
    return np.sin(2 * np.pi * 2500 * t) * np.exp(-t / 0.003)


def gen_pair(spec: GenreSpec, seed: int, duration_s: float, sample_rate: int = audio.FIXTURE_SAMPLE_RATE,
             fps: float = motion.FPS) -> tuple[audio.MusicClip, motion.MotionFragment]:
    """One paired track; deterministic in ``(spec, seed)``."""
    n_clips = duration_s / motion.CLIP_SECONDS
    if duration_s <= 0 or abs(n_clips - round(n_clips)) > 1e-9:
        raise ContractError(f"duration must be a positive multiple of {motion.CLIP_SECONDS:g} s, got {duration_s}")
    rng = np.random.default_rng([seed, spec.genre_id])
    period = spec.beat_period
    t0 = rng.uniform(0, period)
    gain = 1.0 + 0.05 * rng.standard_normal()

    # music
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    phase = np.mod(t - t0, period) / period
    env = 0.3 + 0.7 * np.exp(-4.0 * phase)
    f = spec.tone_hz
    tone = np.sin(2 * np.pi * f * t) + 0.5 * np.sin(4 * np.pi * f * t) + 0.25 * np.sin(6 * np.pi * f * t)
    x = 0.25 * env * tone
    click = _click(sample_rate)
    k0 = -math.floor(t0 / period)
    beat = t0 + k0 * period
    while beat < duration_s:
        i = int(round(beat * sample_rate))
        if i >= 0:
            seg = click[: n - i]
            x[i:i + seg.size] += 0.4 * seg
        beat += period
    x += spec.noise * rng.standard_normal(n)
    x = audio.to_pcm16(x).astype(np.float64) / 32768.0

    # motion
    frames = int(round(duration_s * fps))
    tau = np.arange(frames) / fps
    w = 2 * np.pi / period * (tau - t0)
    root = spec.root_amp * np.sin(w[:, None] + np.array([0.0, 1.3, 2.1]))
    root[:, 1] += 0.9
    body = gain * spec.body_amp * np.sin(w[:, None, None] + spec.body_phase)
    hand = gain * spec.hand_amp * np.sin(spec.hand_mult * w[:, None, None] + spec.hand_phase)
    m = np.concatenate([root, body.reshape(frames, -1), hand.reshape(frames, -1)], axis=1)
    m += spec.noise * rng.standard_normal(m.shape)
    return audio.MusicClip(x, sample_rate), motion.MotionFragment(m, fps)


def split_counts(n: int) -> tuple[int, int, int]:
    n_train = int(round(0.7 * n))
    n_val = int(round(0.15 * n))
    return n_train, n_val, n - n_train - n_val


def gen_dataset(specs: Sequence[GenreSpec], n_per_genre: int, seed: int, out_dir: str | Path,
                duration_s: float = 20.0, sample_rate: int = audio.FIXTURE_SAMPLE_RATE) -> dict:
    """Write WAV + MOTN pairs and ``manifest.json``; returns the manifest.

    Pairs are split 70/15/15 after a seeded shuffle, so each pair lives in
    exactly one split.
    """
    if n_per_genre < 3:
        raise ContractError(f"need at least 3 pairs per genre, got {n_per_genre}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = [(spec, i) for spec in specs for i in range(n_per_genre)]
    order = np.random.default_rng([seed, 99]).permutation(len(ids))
    n_train, n_val, _ = split_counts(len(ids))
    split_of = {}
    for rank, j in enumerate(order):
        split_of[int(j)] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"

    pairs = []
    for j, (spec, i) in enumerate(ids):
        pid = f"g{spec.genre_id:02d}_{i:03d}"
        clip, mot = gen_pair(spec, seed * 100_003 + i, duration_s, sample_rate)
        wav_rel, motn_rel = f"pairs/{pid}.wav", f"pairs/{pid}.motn"
        audio.save_wav(out / wav_rel, clip)
        motion.save_motn(out / motn_rel, mot)
        pairs.append({"id": pid, "genre": spec.genre_id, "split": split_of[j], "audio": wav_rel,
                      "motion": motn_rel})
    manifest = {
        "version": 1,
        "seed": seed,
        "sample_rate": sample_rate,
        "fps": motion.FPS,
        "duration_s": duration_s,
        "genres": [s.summary() for s in specs],
        "pairs": pairs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest
