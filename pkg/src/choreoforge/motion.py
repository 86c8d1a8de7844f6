"""Skeleton layout and the 159-dim motion fragment model.

Per frame: root translation (3, meters) followed by 52 axis-angle joint
rotations (3 each, radians).  Joints 0..21 are the body, 22..36 the left
hand and 37..51 the right hand.  The body slice carries the root
translation (69 columns); the hand slice is the remaining 90.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import formats
from .errors import ContractError, FormatError, NumericError

N_JOINTS = 52
N_BODY_JOINTS = 22
FEATURE_DIM = 3 + 3 * N_JOINTS  # 159
BODY_DIM = 3 + 3 * N_BODY_JOINTS  # 69
HAND_DIM = FEATURE_DIM - BODY_DIM  # 90
FPS = 30.0
CLIP_SECONDS = 4.0
CLIP_FRAMES = int(FPS * CLIP_SECONDS)  # 120

MOTN_MAGIC = b"MOTN"

_BODY_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist",
]
_BODY_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]
_FINGERS = ["index", "middle", "pinky", "ring", "thumb"]


def _hand(side: str, wrist: int, start: int) -> tuple[list[str], list[int]]:
    names, parents = [], []
    for f, finger in enumerate(_FINGERS):
        for seg in range(3):
            names.append(f"{side}_{finger}{seg + 1}")
            parents.append(wrist if seg == 0 else start + 3 * f + seg - 1)
    return names, parents


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple[str, ...]
    parents: tuple[int, ...]
    body_joints: tuple[int, ...] = tuple(range(N_BODY_JOINTS))
    left_hand_joints: tuple[int, ...] = tuple(range(22, 37))
    right_hand_joints: tuple[int, ...] = tuple(range(37, 52))

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def hand_joints(self) -> tuple[int, ...]:
        return self.left_hand_joints + self.right_hand_joints

    @classmethod
    def default(cls) -> "Skeleton":
        ln, lp = _hand("left", 20, 22)
        rn, rp = _hand("right", 21, 37)
        return cls(tuple(_BODY_NAMES + ln + rn), tuple(_BODY_PARENTS + lp + rp))


SKELETON = Skeleton.default()


@dataclass(frozen=True)
class MotionFragment:
    """A ``T x 159`` motion matrix at a fixed frame rate.  Read-only after construction."""

    frames: np.ndarray
    fps: float = FPS

    def __post_init__(self) -> None:
        f = np.array(self.frames, dtype=np.float32)
        if f.ndim != 2 or f.shape[1] != FEATURE_DIM:
            raise FormatError(f"motion fragment must be T x {FEATURE_DIM}, got shape {f.shape}")
        if f.shape[0] < 1:
            raise FormatError("motion fragment has no frames")
        if not np.all(np.isfinite(f)):
            raise NumericError("motion fragment holds non-finite values")
        if not self.fps > 0:
            raise ContractError(f"fps must be positive, got {self.fps}")
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def root_translation(self) -> np.ndarray:
        return self.frames[:, :3]

    @property
    def rotations(self) -> np.ndarray:
        """Joint rotations as a ``T x 52 x 3`` view."""
        return self.frames[:, 3:].reshape(-1, N_JOINTS, 3)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MotionFragment):
            return NotImplemented
        return self.fps == other.fps and np.array_equal(self.frames, other.frames)

    __hash__ = None  # type: ignore[assignment]


def split_full_body(m: MotionFragment) -> tuple[np.ndarray, np.ndarray]:
    """Return the ``(T, 69)`` body slice and ``(T, 90)`` hand slice."""
    if m.frames.shape[1] != FEATURE_DIM:
        raise FormatError(f"expected {FEATURE_DIM} columns, got {m.frames.shape[1]}")
    return m.frames[:, :BODY_DIM], m.frames[:, BODY_DIM:]


def recombine(body: np.ndarray, hand: np.ndarray, fps: float = FPS) -> MotionFragment:
    body = np.asarray(body)
    hand = np.asarray(hand)
    if body.ndim != 2 or hand.ndim != 2 or body.shape[1] != BODY_DIM or hand.shape[1] != HAND_DIM \
            or body.shape[0] != hand.shape[0]:
        raise FormatError(f"cannot recombine body {body.shape} with hand {hand.shape}")
    return MotionFragment(np.concatenate([body, hand], axis=1), fps)


def canonicalize_rotvecs(v: np.ndarray) -> np.ndarray:
    """Wrap axis-angle vectors (last axis = 3) so every magnitude lies in [0, pi].

    Vectors already within range are returned bit-for-bit unchanged.
    """
    v = np.asarray(v)
    if not np.all(np.isfinite(v)):
        raise NumericError("axis-angle input holds non-finite values")
    v64 = v.astype(np.float64)
    theta = np.linalg.norm(v64, axis=-1, keepdims=True)
    # pi rounded to the storage dtype, so an exact-pi input stays put
    limit = float(np.asarray(math.pi, dtype=v.dtype)) if np.issubdtype(v.dtype, np.floating) else math.pi
    over = theta > limit
    if not np.any(over):
        return v.copy()
    safe = np.where(over, theta, 1.0)
    wrapped = theta - 2 * math.pi * np.floor((theta + math.pi) / (2 * math.pi))
    out = np.where(over, v64 / safe * wrapped, v64)
    return out.astype(v.dtype)


def canonicalize_axis_angle(m: MotionFragment) -> MotionFragment:
    rot = canonicalize_rotvecs(m.frames[:, 3:].reshape(-1, N_JOINTS, 3))
    return MotionFragment(np.concatenate([m.frames[:, :3], rot.reshape(len(m), -1)], axis=1), m.fps)


def concat_fragments(fragments: Sequence[MotionFragment]) -> MotionFragment:
    if not fragments:
        raise ContractError("concat_fragments needs at least one fragment")
    fps = fragments[0].fps
    for f in fragments[1:]:
        if f.fps != fps:
            raise ContractError(f"fps mismatch: {fps} vs {f.fps}")
    if len(fragments) == 1:
        return fragments[0]
    return MotionFragment(np.concatenate([f.frames for f in fragments], axis=0), fps)


# -- serialization -------------------------------------------------------------

def to_motn(m: MotionFragment) -> bytes:
    return formats.pack_matrix(MOTN_MAGIC, m.fps, m.frames)


def from_motn(blob: bytes) -> MotionFragment:
    fps, frames = formats.unpack_matrix(blob, MOTN_MAGIC, FEATURE_DIM)
    return MotionFragment(frames, fps)


def save_motn(path: str | Path, m: MotionFragment) -> None:
    formats.write_bytes(path, to_motn(m))


def load_motn(path: str | Path) -> MotionFragment:
    return from_motn(Path(path).read_bytes())


def to_json(m: MotionFragment) -> str:
    return json.dumps({"fps": m.fps, "frames": m.frames.astype(np.float64).tolist()})


def from_json(text: str) -> MotionFragment:
    obj = json.loads(text)
    try:
        return MotionFragment(np.asarray(obj["frames"], dtype=np.float32), float(obj["fps"]))
    except KeyError as exc:
        raise FormatError(f"motion JSON lacks {exc}") from None
