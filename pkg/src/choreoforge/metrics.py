"""Evaluation: genre classifier features, Frechet distance, diversity, multimodality, genre score."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint, gcrm, nn
from . import tensor as T
from .errors import CheckpointError, ContractError
from .motion import BODY_DIM, FEATURE_DIM, HAND_DIM, MotionFragment
from .optim import Adam

FEATURE_SIZE = 64
DIVERSITY_PAIRS = 300
JACOBI_TOL = 1e-10
JACOBI_SWEEPS = 100


# -- classifier -------------------------------------------------------------

@dataclass
class ClassifierConfig:
    n_genres: int = 4
    part: str = "full"  # "full" (159 columns) or "hand" (90 columns)
    width: int = 64
    kernel: int = 5


class GenreClassifier(nn.Module):
    """Temporal conv encoder with a 64-dim penultimate feature layer and a linear genre head."""

    def __init__(self, cfg: ClassifierConfig | None = None, seed: int = 0) -> None:
        self.cfg = cfg or ClassifierConfig()
        if self.cfg.part not in ("full", "hand"):
            raise ContractError(f"classifier part must be 'full' or 'hand', got {self.cfg.part!r}")
        rng = np.random.default_rng(seed)
        self.in_dim = FEATURE_DIM if self.cfg.part == "full" else HAND_DIM
        self.encoder = nn.TemporalEncoder(self.in_dim, self.cfg.width, FEATURE_SIZE, rng, self.cfg.kernel)
        self.logits_head = nn.Dense(FEATURE_SIZE, self.cfg.n_genres, rng)
        self.norm = nn.Normalizer.identity(self.in_dim)

    def inputs(self, fragments) -> np.ndarray:
        if isinstance(fragments, MotionFragment):
            fragments = [fragments]
        x = np.stack([f.frames if isinstance(f, MotionFragment) else np.asarray(f, np.float32) for f in fragments])
        if self.cfg.part == "hand":
            x = x[..., BODY_DIM:]
        return self.norm.apply(x)

    def features_tensor(self, x: np.ndarray) -> T.Tensor:
        return self.encoder(T.Tensor(x))

    def forward(self, x: np.ndarray) -> T.Tensor:
        return self.logits_head(T.gelu(self.features_tensor(x)))

    def features(self, fragments) -> np.ndarray:
        with T.no_grad():
            return self.features_tensor(self.inputs(fragments)).data.astype(np.float64)

    def predict(self, fragments) -> np.ndarray:
        with T.no_grad():
            return np.argmax(self.forward(self.inputs(fragments)).data, axis=1)

    def save(self, path: str | Path) -> None:
        state = {f"param.{k}": v for k, v in self.state_dict().items()}
        state["buffer.mean"] = self.norm.mean
        state["buffer.std"] = self.norm.std
        checkpoint.save_model(path, "classifier", asdict(self.cfg), state)

    @classmethod
    def load(cls, path: str | Path) -> "GenreClassifier":
        meta = checkpoint.read_meta(path, "classifier")
        model = cls(ClassifierConfig(**meta["config"]))
        state = checkpoint.load(path)
        model.load_state_dict(state, prefix="param.")
        try:
            model.norm = nn.Normalizer(state["buffer.mean"], state["buffer.std"])
        except KeyError as exc:
            raise CheckpointError(f"checkpoint {path} lacks buffer {exc}") from None
        return model


@dataclass
class ClassifierTrainConfig:
    steps: int = 300
    batch: int = 32
    lr: float = 1e-3
    seed: int = 0


@dataclass
class ClassifierResult:
    model: GenreClassifier
    history: list[float] = field(default_factory=list)


def train_classifier(fragments: Sequence[MotionFragment], genres: Sequence[int], part: str = "full",
                     cfg: ClassifierTrainConfig | None = None, n_genres: int | None = None) -> ClassifierResult:
    cfg = cfg or ClassifierTrainConfig()
    genres = np.asarray(genres, dtype=np.int64)
    if len(fragments) == 0 or len(fragments) != len(genres):
        raise ContractError("classifier training needs non-empty aligned fragments and genres")
    n_genres = int(n_genres if n_genres is not None else genres.max() + 1)
    model = GenreClassifier(ClassifierConfig(n_genres=n_genres, part=part), seed=cfg.seed)
    raw = np.stack([f.frames for f in fragments])
    model.norm = nn.Normalizer.fit(raw if part == "full" else raw[..., BODY_DIM:])
    x = model.inputs(raw)
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 5])
    result = ClassifierResult(model)
    for _ in range(cfg.steps):
        idx = rng.integers(0, len(x), size=cfg.batch)
        loss = T.cross_entropy(model(x[idx]), genres[idx])
        loss.validate()
        T.backward(loss)
        opt.step()
        result.history.append(loss.item())
    return result


def accuracy(model: GenreClassifier, fragments: Sequence[MotionFragment], genres: Sequence[int]) -> float:
    return float(np.mean(model.predict(fragments) == np.asarray(genres)))


# -- Gaussian statistics and the Frechet distance ---------------------------

@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise ContractError(f"covariance {cov.shape} does not match mean of size {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-9):
            raise ContractError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (cov + cov.T) / 2)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def from_features(cls, features: np.ndarray) -> "GaussianStats":
        """Sample mean and unbiased covariance of ``(N, D)`` features; needs N >= 2."""
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ContractError(f"need at least 2 feature rows, got shape {x.shape}")
        mu = x.mean(axis=0)
        d = x - mu
        return cls(mu, d.T @ d / (x.shape[0] - 1))


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and eigenvectors of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm is at most ``tol`` times
    the matrix Frobenius norm.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"jacobi_eigh needs a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-9 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ContractError("jacobi_eigh needs a symmetric matrix")
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                with np.errstate(over="ignore"):
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if not math.isfinite(theta):  # negligible coupling
                    a[p, q] = a[q, p] = 0.0
                    continue
                if abs(theta) > 1e150:  # theta**2 would overflow; small-angle limit
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * cp - s * cq, s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = c * rp - s * rq, s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix; negative eigenvalues are clamped to 0."""
    w, v = jacobi_eigh(a)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance ``|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))``.

    The cross term uses ``Tr(sqrt(C))`` with ``C = S1^(1/2) S2 S1^(1/2)``,
    which is symmetric PSD and has the same eigenvalues as ``S1 S2``.
    """
    if a.dim != b.dim:
        raise ContractError(f"cannot compare {a.dim}-dim and {b.dim}-dim statistics")
    root = sqrtm_psd(a.cov)
    c = root @ b.cov @ root
    w, _ = jacobi_eigh((c + c.T) / 2)
    cross = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(value, 0.0)


def fid_features(a: np.ndarray, b: np.ndarray) -> float:
    return fid(GaussianStats.from_features(a), GaussianStats.from_features(b))


# -- spread metrics ----------------------------------------------------------

def _pair_indices(n: int, n_pairs: int, seed: int) -> list[tuple[int, int]]:
    pairs = list(itertools.combinations(range(n), 2))
    if len(pairs) <= n_pairs:
        return pairs
    pick = np.random.default_rng(seed).choice(len(pairs), size=n_pairs, replace=False)
    return [pairs[i] for i in np.sort(pick)]


def diversity(features: np.ndarray, n_pairs: int = DIVERSITY_PAIRS, seed: int = 0) -> float:
    """Mean L2 distance over ``n_pairs`` fixed-seed random pairs (all pairs when there are fewer)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError(f"diversity needs at least 2 feature vectors, got shape {x.shape}")
    pairs = np.array(_pair_indices(x.shape[0], n_pairs, seed))
    return float(np.mean(np.linalg.norm(x[pairs[:, 0]] - x[pairs[:, 1]], axis=1)))


def mean_pairwise(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    i, j = np.triu_indices(x.shape[0], k=1)
    return float(np.mean(np.linalg.norm(x[i] - x[j], axis=1)))


def multimodality_groups(groups: Sequence[np.ndarray]) -> list[float]:
    if len(groups) == 0:
        raise ContractError("multimodality needs at least one group")
    out = []
    for k, g in enumerate(groups):
        g = np.asarray(g, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] < 2:
            raise ContractError(f"group {k} needs at least 2 versions, got shape {g.shape}")
        out.append(mean_pairwise(g))
    return out


def multimodality(groups: Sequence[np.ndarray]) -> float:
    """Within-group mean pairwise L2, averaged over groups (one group per music piece)."""
    return float(np.mean(multimodality_groups(groups)))


def hand_metrics(hand_classifier: GenreClassifier, generated: Sequence[MotionFragment],
                 reference: Sequence[MotionFragment]) -> tuple[float, float]:
    """Frechet distance and diversity on features of the hand columns only."""
    if hand_classifier.cfg.part != "hand":
        raise ContractError("hand metrics need a classifier trained on the hand columns")
    gen = hand_classifier.features(generated)
    ref = hand_classifier.features(reference)
    return fid_features(gen, ref), diversity(gen)


def gs_values(retrieval: gcrm.RetrievalModel, images: Sequence[np.ndarray],
              fragments: Sequence[MotionFragment]) -> np.ndarray:
    if len(images) != len(fragments):
        raise ContractError(f"{len(images)} clips but {len(fragments)} fragments")
    if len(images) == 0:
        raise ContractError("genre score metric needs at least one pair")
    return gcrm.cosine(retrieval.embed_music(np.stack(images)), retrieval.embed_dance(fragments))


def gs_metric(retrieval: gcrm.RetrievalModel, images: Sequence[np.ndarray],
              fragments: Sequence[MotionFragment]) -> float:
    """Mean genre score over aligned (clip, fragment) pairs."""
    return float(np.mean(gs_values(retrieval, images, fragments)))


def evaluate(classifier: GenreClassifier, hand_classifier: GenreClassifier, retrieval: gcrm.RetrievalModel,
             reference: Sequence[MotionFragment], generated: Sequence[MotionFragment],
             images: Sequence[np.ndarray], variation_groups: Sequence[Sequence[MotionFragment]]) -> dict:
    """Metric report for generated fragments against a reference set.

    ``generated[i]`` is the dance produced for clip ``images[i]``;
    ``variation_groups`` holds the alternative dances for each music piece.
    """
    gen_f = classifier.features(generated)
    ref_f = classifier.features(reference)
    fid_hand, div_hand = hand_metrics(hand_classifier, generated, reference)
    mm = multimodality_groups([classifier.features(list(g)) for g in variation_groups])
    gs = gs_values(retrieval, images, generated)
    return {
        "fid": fid_features(gen_f, ref_f),
        "fid_hand": fid_hand,
        "diversity": diversity(gen_f),
        "diversity_hand": div_hand,
        "multimodality": float(np.mean(mm)),
        "gs": float(np.mean(gs)),
        "raw": {"gs": [float(v) for v in gs], "multimodality": mm},
    }
