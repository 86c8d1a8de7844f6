"""Manifest-driven corpus loading: tracks cut into aligned 4-second clip records."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import audio, motion
from .errors import FormatError
from .motion import MotionFragment
from .pipeline import split_music


@dataclass(frozen=True)
class ClipRecord:
    pair_id: str
    genre: int
    split: str
    index: int
    features: np.ndarray  # (120, 35)
    image: np.ndarray  # (224, 224, 3)
    fragment: MotionFragment


def read_manifest(path: str | Path) -> dict:
    p = Path(path)
    try:
        manifest = json.loads(p.read_text())
    except FileNotFoundError:
        raise FormatError(f"manifest not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {p} is not valid JSON: {exc}") from None
    if "pairs" not in manifest:
        raise FormatError(f"manifest {p} has no 'pairs' list")
    return manifest


def cut_track(clip: audio.MusicClip, mot: MotionFragment) -> list[tuple[audio.MusicClip, MotionFragment]]:
    """Non-overlapping 4 s music clips with their 120-frame motion fragments."""
    out = []
    for i, c in enumerate(split_music(clip)):
        lo = i * motion.CLIP_FRAMES
        frames = mot.frames[lo:lo + motion.CLIP_FRAMES]
        if len(frames) < motion.CLIP_FRAMES:
            break
        out.append((c, MotionFragment(frames, mot.fps)))
    return out


def _feature_paths(cache: Path, pid: str, i: int) -> tuple[Path, Path]:
    return cache / f"{pid}_{i:02d}.feat", cache / f"{pid}_{i:02d}.meli"


def featurize(manifest_path: str | Path, out_dir: str | Path | None = None) -> Path:
    """Precompute FEAT/MELI files for every clip of every pair; returns the cache dir."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    cache = Path(out_dir) if out_dir is not None else root / "features"
    cache.mkdir(parents=True, exist_ok=True)
    index = {}
    for pair in read_manifest(manifest_path)["pairs"]:
        clip = audio.load_wav(root / pair["audio"])
        mot = motion.load_motn(root / pair["motion"])
        n = 0
        for i, (c, _) in enumerate(cut_track(clip, mot)):
            fpath, ipath = _feature_paths(cache, pair["id"], i)
            audio.save_features(fpath, audio.temporal_features(c))
            audio.save_mel_image(ipath, audio.mel_image(c))
            n += 1
        index[pair["id"]] = n
    (cache / "index.json").write_text(json.dumps(index, indent=2))
    return cache


def load_corpus(manifest_path: str | Path, splits: Iterable[str] = ("train",),
                cache_dir: str | Path | None = None) -> list[ClipRecord]:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    cache = Path(cache_dir) if cache_dir is not None else root / "features"
    cached = (cache / "index.json").is_file()
    wanted = set(splits)
    records = []
    for pair in read_manifest(manifest_path)["pairs"]:
        if pair["split"] not in wanted:
            continue
        clip = audio.load_wav(root / pair["audio"])
        mot = motion.load_motn(root / pair["motion"])
        for i, (c, frag) in enumerate(cut_track(clip, mot)):
            fpath, ipath = _feature_paths(cache, pair["id"], i)
            if cached and fpath.is_file() and ipath.is_file():
                feats, image = audio.load_features(fpath), audio.load_mel_image(ipath)
            else:
                feats, image = audio.temporal_features(c), audio.mel_image(c)
            records.append(ClipRecord(pair["id"], int(pair["genre"]), pair["split"], i, feats, image, frag))
    return records


def load_tracks(manifest_path: str | Path, split: str = "test") -> list[tuple[dict, audio.MusicClip, MotionFragment]]:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    return [(p, audio.load_wav(root / p["audio"]), motion.load_motn(root / p["motion"]))
            for p in read_manifest(manifest_path)["pairs"] if p["split"] == split]
