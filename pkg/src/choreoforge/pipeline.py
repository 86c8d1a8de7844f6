"""Track-level choreography: clip splitting, candidate generation, retrieval, stitching.

For each 4 s clip the diffusion model proposes ``m`` candidates; the
retrieval module scores them (genre score against the clip's mel image,
coherent score against the previously chosen fragment) and the best is
stitched onto the dance so far.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import audio, gcrm
from .audio import MusicClip
from .errors import ConfigError, ContractError
from .fdgn import FDGN, generate_candidates
from .motion import CLIP_FRAMES, CLIP_SECONDS, FPS, MotionFragment, concat_fragments, save_motn

STRATEGIES = ("finenet", "fdgn-g", "fdgn-c")
CONFIG_SECTION = "run"


def split_music(track: MusicClip) -> list[MusicClip]:
    """Non-overlapping 4 s clips; a trailing remainder shorter than 4 s is dropped."""
    n = int(round(CLIP_SECONDS * track.sample_rate))
    count = len(track) // n
    if count < 1:
        raise ContractError(f"track of {track.duration:.3f} s is shorter than one {CLIP_SECONDS:g} s clip")
    return [MusicClip(track.samples[i * n:(i + 1) * n], track.sample_rate) for i in range(count)]


# -- configuration ------------------------------------------------------------

@dataclass
class RunConfig:
    fdgn_checkpoint: str | None = None
    retrieval_checkpoint: str | None = None
    audio: str | None = None
    output: str | None = None
    m: int = 8
    alpha: float = 1.0
    beta: float = 0.5
    strategy: str = "finenet"
    seed: int | None = None
    fps: float = FPS
    diffusion_steps: int | None = None  # None: whatever the checkpoint was trained with
    frames: int | None = None  # fdgn-g output length; None: N * 120

    def validate(self) -> "RunConfig":
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {', '.join(STRATEGIES)}")
        if self.seed is None:
            raise ConfigError("a seed is required")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.fps != FPS:
            raise ConfigError(f"models run at {FPS:g} fps, got fps={self.fps}")
        if self.frames is not None and self.frames < 1:
            raise ConfigError(f"frames must be positive, got {self.frames}")
        try:
            gcrm.SelectionWeights(self.alpha, self.beta)
        except ContractError as exc:
            raise ConfigError(str(exc)) from None
        return self

    @property
    def weights(self) -> gcrm.SelectionWeights:
        return gcrm.SelectionWeights(self.alpha, self.beta)

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_FIELD_TYPES = {"m": int, "seed": int, "diffusion_steps": int, "frames": int, "alpha": float, "beta": float,
                "fps": float}


def _coerce(name: str, value):
    if value is None:
        return None
    kind = _FIELD_TYPES.get(name, str)
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot read {value!r} as {kind.__name__}") from None


def read_config_file(path: str | Path) -> dict:
    """Key-value pairs from the ``[run]`` section of an INI-style file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not parser.has_section(CONFIG_SECTION):
        raise ConfigError(f"config {path} has no [{CONFIG_SECTION}] section")
    return dict(parser.items(CONFIG_SECTION))


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge file values and explicit overrides (overrides win, ``None`` means unset)."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values: dict = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                values[key] = _coerce(key, value)
    return RunConfig(**values).validate()


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    return build_config(read_config_file(path) if path is not None else {}, overrides)


# -- models and inputs --------------------------------------------------------

@dataclass
class Models:
    fdgn: FDGN
    retrieval: gcrm.RetrievalModel

    @classmethod
    def load(cls, cfg: RunConfig) -> "Models":
        if not cfg.fdgn_checkpoint or not cfg.retrieval_checkpoint:
            raise ConfigError("both fdgn_checkpoint and retrieval_checkpoint are required")
        models = cls(FDGN.load(cfg.fdgn_checkpoint), gcrm.RetrievalModel.load(cfg.retrieval_checkpoint))
        models.check(cfg)
        return models

    def check(self, cfg: RunConfig) -> None:
        s = self.fdgn.schedule.steps
        if cfg.diffusion_steps is not None and cfg.diffusion_steps != s:
            raise ConfigError(f"config asks for {cfg.diffusion_steps} diffusion steps; the checkpoint uses {s}")


@dataclass(frozen=True)
class ClipInput:
    features: np.ndarray  # (120, 35)
    image: np.ndarray  # (224, 224, 3)


def prepare_track(track: MusicClip) -> list[ClipInput]:
    return [ClipInput(audio.temporal_features(c), audio.mel_image(c)) for c in split_music(track)]


def track_candidates(model: FDGN, clips: Sequence[ClipInput], m: int, seed: int) -> list[list[MotionFragment]]:
    """``m`` candidates per clip; clip ``t`` candidate ``i`` uses RNG stream ``(seed, t, i)``."""
    return [generate_candidates(model, c.features, m, seed, stream=t) for t, c in enumerate(clips)]


# -- results ------------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    gs: list[float]
    cs: list[float]
    combined: list[float]
    idx: int
    forced_rank: int | None = None


@dataclass
class ChoreographyResult:
    motion: MotionFragment
    strategy: str
    steps: list[StepRecord] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def indices(self) -> list[int]:
        return [s.idx for s in self.steps]

    def report(self) -> dict:
        return {
            "strategy": self.strategy,
            "frames": len(self.motion),
            "fps": self.motion.fps,
            "provenance": self.provenance,
            "steps": [dataclasses.asdict(s) for s in self.steps],
        }


def _provenance(cfg: RunConfig, **extra) -> dict:
    return {"config_sha256": cfg.digest(), "seed": cfg.seed, "strategy": cfg.strategy, "m": cfg.m,
            "alpha": cfg.alpha, "beta": cfg.beta, **extra}


def replay_indices(report: dict) -> list[int]:
    """Re-derive every chosen index from the scores recorded in a report."""
    w = gcrm.SelectionWeights(report["provenance"]["alpha"], report["provenance"]["beta"])
    out = []
    for step in report["steps"]:
        combined = gcrm.combined_scores(step["gs"], step["cs"], w)
        rank = step.get("forced_rank")
        out.append(int(gcrm.ranked(combined)[rank]) if rank is not None else int(np.argmax(combined)))
    return out


# -- strategies ---------------------------------------------------------------

def choreograph(retrieval: gcrm.RetrievalModel, clips: Sequence[ClipInput],
                candidates: Sequence[Sequence[MotionFragment]], weights: gcrm.SelectionWeights,
                first_rank: int | None = None) -> tuple[MotionFragment, list[StepRecord]]:
    """Sequential retrieval over per-clip candidates, then stitching of the chosen fragments.

    ``first_rank`` forces the step-1 choice to the candidate with that rank
    (0 = best) under the combined score.
    """
    if len(clips) != len(candidates) or not clips:
        raise ContractError(f"{len(clips)} clips but {len(candidates)} candidate lists")
    chosen: list[MotionFragment] = []
    records = []
    for t, (clip, cands) in enumerate(zip(clips, candidates)):
        try:
            gs = gcrm.genre_scores(retrieval, clip.image, cands)
            prev = chosen[-1] if chosen else None
            cs = np.array([gcrm.coherent_score(prev, c) for c in cands])
            idx, combined = gcrm.select(gs, cs, weights)
        except ContractError as exc:
            raise ContractError(f"step {t + 1}: {exc}") from None
        forced = None
        if t == 0 and first_rank is not None:
            if not 0 <= first_rank < len(cands):
                raise ContractError(f"cannot force rank {first_rank} among {len(cands)} candidates")
            forced = first_rank
            idx = int(gcrm.ranked(combined)[first_rank])
        chosen.append(cands[idx])
        records.append(StepRecord(t + 1, gs.tolist(), cs.tolist(), combined.tolist(), idx, forced))
    return gcrm.stitch_all(chosen), records


def run_finenet(cfg: RunConfig, track: MusicClip, models: Models | None = None,
                first_rank: int | None = None) -> ChoreographyResult:
    cfg.validate()
    models = models or Models.load(cfg)
    models.check(cfg)
    clips = prepare_track(track)
    cands = track_candidates(models.fdgn, clips, cfg.m, cfg.seed)
    motion, records = choreograph(models.retrieval, clips, cands, cfg.weights, first_rank)
    return ChoreographyResult(motion, "finenet", records, _provenance(cfg, clips=len(clips)))


def run_variations(cfg: RunConfig, track: MusicClip, k: int, models: Models | None = None) -> list[ChoreographyResult]:
    """``k`` dances; dance ``j`` starts from the step-1 candidate ranked ``j`` and continues greedily."""
    cfg.validate()
    if not 1 <= k <= cfg.m:
        raise ContractError(f"need 1 <= K <= M, got K={k}, M={cfg.m}")
    models = models or Models.load(cfg)
    models.check(cfg)
    clips = prepare_track(track)
    cands = track_candidates(models.fdgn, clips, cfg.m, cfg.seed)
    out = []
    for j in range(k):
        motion, records = choreograph(models.retrieval, clips, cands, cfg.weights, first_rank=j)
        out.append(ChoreographyResult(motion, "finenet", records,
                                      _provenance(cfg, clips=len(clips), variation=j)))
    return out


def run_ablation(cfg: RunConfig, track: MusicClip, models: Models | None = None) -> ChoreographyResult:
    """``fdgn-g``: one sample over the whole track; ``fdgn-c``: one sample per clip, concatenated."""
    cfg.validate()
    if cfg.strategy not in ("fdgn-g", "fdgn-c"):
        raise ConfigError(f"ablation strategy must be fdgn-g or fdgn-c, got {cfg.strategy!r}")
    models = models or Models.load(cfg)
    models.check(cfg)
    clips = prepare_track(track)
    prov = _provenance(cfg, clips=len(clips))
    if cfg.strategy == "fdgn-c":
        parts = [c[0] for c in track_candidates(models.fdgn, clips, 1, cfg.seed)]
        return ChoreographyResult(concat_fragments(parts), "fdgn-c", [], prov)
    feats = np.concatenate([c.features for c in clips])
    frames = cfg.frames if cfg.frames is not None else len(feats)
    if frames > len(feats):
        raise ContractError(f"fdgn-g asked for {frames} frames but the track only covers {len(feats)}")
    # stream index len(clips) is never used by per-clip candidates
    (motion,) = generate_candidates(models.fdgn, feats[:frames], 1, cfg.seed, stream=len(clips))
    return ChoreographyResult(motion, "fdgn-g", [], prov)


def run(cfg: RunConfig, track: MusicClip, models: Models | None = None) -> ChoreographyResult:
    cfg.validate()
    if cfg.strategy == "finenet":
        return run_finenet(cfg, track, models)
    return run_ablation(cfg, track, models)


# -- junction analysis --------------------------------------------------------

def junction_max_jump(motion: MotionFragment, clip_frames: int = CLIP_FRAMES) -> float:
    """Largest frame-to-frame L2 step in the 12-frame window ``[b-6, b+5]`` around each clip boundary ``b``.

    The window spans the last kept frame of the earlier clip, the 10 frames
    replaced when stitching, and the first kept frame of the later clip.
    """
    n = len(motion) // clip_frames
    if n < 2:
        raise ContractError("junction analysis needs at least two clips")
    x = motion.frames.astype(np.float64)
    worst = 0.0
    for t in range(1, n):
        b = t * clip_frames
        window = x[b - gcrm.CUT - 1:b + gcrm.CUT + 1]
        worst = max(worst, float(np.linalg.norm(np.diff(window, axis=0), axis=1).max()))
    return worst


def save_result(result: ChoreographyResult, motion_path: str | Path, report_path: str | Path | None = None) -> Path:
    """Write the dance as MOTN and the report as JSON (default: alongside, ``.json`` suffix)."""
    motion_path = Path(motion_path)
    motion_path.parent.mkdir(parents=True, exist_ok=True)
    save_motn(motion_path, result.motion)
    report_path = Path(report_path) if report_path is not None else motion_path.with_suffix(".json")
    report_path.write_text(json.dumps(result.report(), indent=2))
    return report_path
