"""Genre- and coherence-aware retrieval over generated candidates.

Two encoders map mel images and motion fragments into a shared 64-dim
space.  Their cosine is the genre score; the coherent score penalizes the
pose gap to the previously chosen fragment.  ``select`` combines the two,
and ``stitch`` joins chosen fragments with a linear bridge.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint, nn
from . import tensor as T
from .audio import IMAGE_SIZE
from .errors import CheckpointError, ContractError, NumericError
from .motion import FEATURE_DIM, MotionFragment, canonicalize_rotvecs
from .optim import Adam

EMBED_DIM = 64
PATCH = 16
CUT = 5  # frames trimmed on each side of a junction
BRIDGE = 2 * CUT  # interpolated frames re-inserted


@dataclass
class EncoderConfig:
    embed_dim: int = EMBED_DIM
    width: int = 64
    patch: int = PATCH
    image_size: int = IMAGE_SIZE
    kernel: int = 5


def patchify(images: np.ndarray, patch: int = PATCH) -> np.ndarray:
    """``(B, H, W, C)`` -> ``(B, H/p * W/p, p*p*C)`` non-overlapping patches, row-major."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    b, h, w, c = images.shape
    if h % patch or w % patch:
        raise ContractError(f"image {h}x{w} is not divisible into {patch}x{patch} patches")
    x = images.reshape(b, h // patch, patch, w // patch, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, (h // patch) * (w // patch), patch * patch * c)


class MusicStyleEncoder(nn.Module):
    """Mel image -> embedding: patch projection with a learned position table, mean-pool, 2 dense layers."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator) -> None:
        self.patch = cfg.patch
        n_patches = (cfg.image_size // cfg.patch) ** 2
        self.proj = nn.Dense(cfg.patch * cfg.patch * 3, cfg.width, rng)
        self.position = T.Tensor(rng.normal(0.0, 0.02, (n_patches, cfg.width)).astype(np.float32),
                                 requires_grad=True)
        self.head = nn.MLP([cfg.width, cfg.width, cfg.embed_dim], rng)

    def forward(self, images: np.ndarray) -> T.Tensor:
        h = T.gelu(self.proj(T.Tensor(patchify(images, self.patch))) + self.position)
        return self.head(T.mean(h, axis=1))


class DanceGenreEncoder(nn.Module):
    """Motion frames -> embedding: standardized columns through a temporal conv stack."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator) -> None:
        self.net = nn.TemporalEncoder(FEATURE_DIM, cfg.width, cfg.embed_dim, rng, cfg.kernel)
        self.norm = nn.Normalizer.identity(FEATURE_DIM)

    def forward(self, frames: np.ndarray) -> T.Tensor:
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim == 2:
            frames = frames[None]
        return self.net(T.Tensor(self.norm.apply(frames)))


def _frames(fragments) -> np.ndarray:
    if isinstance(fragments, MotionFragment):
        return fragments.frames[None]
    return np.stack([f.frames if isinstance(f, MotionFragment) else np.asarray(f) for f in fragments])


class RetrievalModel(nn.Module):
    def __init__(self, cfg: EncoderConfig | None = None, seed: int = 0) -> None:
        self.cfg = cfg or EncoderConfig()
        rng = np.random.default_rng(seed)
        self.music = MusicStyleEncoder(self.cfg, rng)
        self.dance = DanceGenreEncoder(self.cfg, rng)

    def embed_music(self, images: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.music(images).data.astype(np.float64)

    def embed_dance(self, fragments) -> np.ndarray:
        with T.no_grad():
            return self.dance(_frames(fragments)).data.astype(np.float64)

    def save(self, path: str | Path) -> None:
        state = {f"param.{k}": v for k, v in self.state_dict().items()}
        state["buffer.dance_mean"] = self.dance.norm.mean
        state["buffer.dance_std"] = self.dance.norm.std
        checkpoint.save_model(path, "retrieval", asdict(self.cfg), state)

    @classmethod
    def load(cls, path: str | Path) -> "RetrievalModel":
        meta = checkpoint.read_meta(path, "retrieval")
        model = cls(EncoderConfig(**meta["config"]))
        state = checkpoint.load(path)
        model.load_state_dict(state, prefix="param.")
        try:
            model.dance.norm = nn.Normalizer(state["buffer.dance_mean"], state["buffer.dance_std"])
        except KeyError as exc:
            raise CheckpointError(f"checkpoint {path} lacks buffer {exc}") from None
        return model


# -- scores ---------------------------------------------------------------

def cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; a zero-norm row raises NumericError."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise NumericError("cosine of a zero-norm embedding is undefined")
    return np.sum(a * b, axis=-1) / (na * nb)


def genre_score(model: RetrievalModel, image: np.ndarray, fragment: MotionFragment) -> float:
    return float(cosine(model.embed_music(image), model.embed_dance(fragment))[0])


def genre_scores(model: RetrievalModel, image: np.ndarray, fragments: Sequence[MotionFragment]) -> np.ndarray:
    """Genre score of one mel image against each candidate fragment."""
    e_m = model.embed_music(image)
    return cosine(np.broadcast_to(e_m, (len(fragments), e_m.shape[-1])), model.embed_dance(fragments))


def cosine_loss(score, label):
    """``y (1 - s) + (1 - y) max(0, s)``, elementwise; Tensor in, Tensor out."""
    if isinstance(score, T.Tensor):
        y = np.asarray(label, dtype=np.float32)
        return T.Tensor(y) * (1.0 - score) + T.Tensor(1.0 - y) * T.relu(score)
    s = np.asarray(score, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    out = y * (1.0 - s) + (1.0 - y) * np.maximum(0.0, s)
    return float(out) if out.ndim == 0 else out


def coherent_score(prev: MotionFragment | None, cand: MotionFragment) -> float:
    """Negated L2 gap between ``prev[T-5]`` and ``cand[5]``; 0 when there is no previous fragment."""
    if len(cand) < CUT + 1:
        raise ContractError(f"candidate has {len(cand)} frames; coherent score needs at least {CUT + 1}")
    if prev is None:
        return 0.0
    if len(prev) < CUT + 1:
        raise ContractError(f"previous fragment has {len(prev)} frames; coherent score needs at least {CUT + 1}")
    gap = prev.frames[len(prev) - CUT].astype(np.float64) - cand.frames[CUT].astype(np.float64)
    return -float(np.linalg.norm(gap))


@dataclass(frozen=True)
class SelectionWeights:
    alpha: float = 1.0
    beta: float = 0.5

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ContractError(f"selection weights must be >= 0 and not both zero, got {self.alpha}, {self.beta}")


def combined_scores(gs, cs, weights: SelectionWeights) -> np.ndarray:
    gs = np.asarray(gs, dtype=np.float64)
    cs = np.asarray(cs, dtype=np.float64)
    if gs.ndim != 1 or gs.shape != cs.shape:
        raise ContractError(f"genre and coherent scores must be equal-length lists, got {gs.shape}, {cs.shape}")
    if gs.size == 0:
        raise ContractError("no candidates to select from")
    return weights.alpha * gs + weights.beta * cs


def select(gs, cs, weights: SelectionWeights = SelectionWeights()) -> tuple[int, np.ndarray]:
    """Index of the best combined score (lowest index on ties) and the combined scores."""
    combined = combined_scores(gs, cs, weights)
    return int(np.argmax(combined)), combined


def ranked(combined) -> np.ndarray:
    """Candidate indices from best to worst; ties keep index order."""
    return np.argsort(-np.asarray(combined, dtype=np.float64), kind="stable")


# -- stitching ------------------------------------------------------------

def bridge_frames(p: np.ndarray, q: np.ndarray, n: int = BRIDGE) -> np.ndarray:
    """``n`` frames ``p + k/(n+1) (q - p)``, k = 1..n, between canonicalized endpoints."""
    p = _canonical_row(p)
    q = _canonical_row(q)
    w = np.arange(1, n + 1, dtype=np.float64)[:, None] / (n + 1)
    return p[None] + w * (q - p)[None]


def _canonical_row(row: np.ndarray) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64).copy()
    row[3:] = canonicalize_rotvecs(row[3:].reshape(-1, 3)).reshape(-1)
    return row


def stitch(prev: MotionFragment, nxt: MotionFragment) -> MotionFragment:
    """Join two fragments, replacing the 5 + 5 frames around the seam with a 10-frame linear bridge.

    The bridge runs from ``prev[T-6]`` (last kept frame) to ``nxt[5]``
    (first kept frame), so the total length is ``len(prev) + len(nxt)``.
    """
    if prev.fps != nxt.fps:
        raise ContractError(f"cannot stitch fragments at {prev.fps} and {nxt.fps} fps")
    for name, f in (("previous", prev), ("next", nxt)):
        if len(f) < 2 * CUT + 1:
            raise ContractError(f"{name} fragment has {len(f)} frames; stitching needs at least {2 * CUT + 1}")
    head = prev.frames[: len(prev) - CUT]
    tail = nxt.frames[CUT:]
    bridge = bridge_frames(head[-1], tail[0])
    return MotionFragment(np.concatenate([head, bridge.astype(np.float32), tail]), prev.fps)


def stitch_all(fragments: Sequence[MotionFragment]) -> MotionFragment:
    if not fragments:
        raise ContractError("nothing to stitch")
    out = fragments[0]
    for f in fragments[1:]:
        out = stitch(out, f)
    return out


# -- training -------------------------------------------------------------

@dataclass
class RetrievalTrainConfig:
    steps: int = 600
    batch: int = 16
    lr: float = 1e-3
    seed: int = 0


@dataclass
class RetrievalResult:
    model: RetrievalModel
    history: list[float] = field(default_factory=list)


def sample_pairs(genres: np.ndarray, batch: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Balanced pairs: music index, dance index, label (half matched, half mismatched genre)."""
    genres = np.asarray(genres)
    by_genre = {g: np.flatnonzero(genres == g) for g in np.unique(genres)}
    if len(by_genre) < 2:
        raise ContractError("retrieval training needs at least two genres")
    labels = (np.arange(batch) % 2 == 0).astype(np.int64)
    music = rng.integers(0, len(genres), size=batch)
    dance = np.empty(batch, dtype=np.int64)
    for k, (i, y) in enumerate(zip(music, labels)):
        g = genres[i]
        pool = by_genre[g] if y else np.flatnonzero(genres != g)
        dance[k] = pool[rng.integers(0, len(pool))]
    return music, dance, labels


def train_retrieval(images: Sequence[np.ndarray], fragments: Sequence[MotionFragment], genres: Sequence[int],
                    cfg: RetrievalTrainConfig | None = None, enc_cfg: EncoderConfig | None = None) -> RetrievalResult:
    """Fit both encoders with the cosine loss on ground-truth clips (music i, dance j, same genre or not)."""
    cfg = cfg or RetrievalTrainConfig()
    if not (len(images) == len(fragments) == len(genres)) or len(images) == 0:
        raise ContractError("retrieval training needs non-empty aligned images, fragments and genres")
    x_img = np.stack([np.asarray(im, np.float32) for im in images])
    x_mot = _frames(fragments)
    genres = np.asarray(genres)
    model = RetrievalModel(enc_cfg, seed=cfg.seed)
    model.dance.norm = nn.Normalizer.fit(x_mot)
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 3])
    result = RetrievalResult(model)
    for _ in range(cfg.steps):
        mi, di, y = sample_pairs(genres, cfg.batch, rng)
        s = T.cosine_similarity(model.music(x_img[mi]), model.dance(x_mot[di]))
        loss = T.mean(cosine_loss(s, y))
        loss.validate()
        T.backward(loss)
        opt.step()
        result.history.append(loss.item())
    return result


def retrieval_accuracy(model: RetrievalModel, images: Sequence[np.ndarray], fragments: Sequence[MotionFragment],
                       genres: Sequence[int]) -> float:
    """Share of music clips whose highest-scoring fragment (among all given) has the clip's genre."""
    genres = np.asarray(genres)
    e_m = model.embed_music(np.stack(images))
    e_d = model.embed_dance(fragments)
    e_m = e_m / np.linalg.norm(e_m, axis=1, keepdims=True)
    e_d = e_d / np.linalg.norm(e_d, axis=1, keepdims=True)
    best = np.argmax(e_m @ e_d.T, axis=1)
    return float(np.mean(genres[best] == genres))
