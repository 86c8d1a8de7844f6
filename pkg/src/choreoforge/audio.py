"""WAV ingestion and music features.

Two representations are produced per 4-second clip:

* a ``120 x 35`` temporal feature matrix at the motion frame rate
  (20 MFCC, 12 chroma, RMS, spectral-flux onset strength, beat flag);
* a ``224 x 224 x 3`` mel-spectrogram image in ``[0, 1]``.
"""
from __future__ import annotations

import io
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from . import formats
from .errors import (
    BadMagicError,
    ContractError,
    EmptyAudioError,
    FormatError,
    TruncatedChunkError,
    UnsupportedCodecError,
)
from .motion import CLIP_SECONDS, FPS

N_FFT = 2048
HOP = 512
N_MELS = 128
N_MFCC = 20
N_CHROMA = 12
FEATURE_DIM = N_MFCC + N_CHROMA + 3  # 35
IMAGE_SIZE = 224
SAMPLE_RATE = 76_800
FIXTURE_SAMPLE_RATE = 48_000
TOP_DB = 80.0
BEAT_RADIUS = 7

COL_MFCC = slice(0, 20)
COL_CHROMA = slice(20, 32)
COL_RMS = 32
COL_ONSET = 33
COL_BEAT = 34

FEAT_MAGIC = b"FEAT"
MELI_MAGIC = b"MELI"


@dataclass(frozen=True)
class MusicClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        s = np.array(self.samples, dtype=np.float64).reshape(-1)
        if s.size == 0:
            raise ContractError("music clip is empty")
        if int(self.sample_rate) <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return self.samples.size


# -- WAV ------------------------------------------------------------------------

def parse_wav(blob: bytes) -> MusicClip:
    """Decode 16-bit PCM RIFF/WAVE bytes; stereo is averaged to mono."""
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise BadMagicError("not a RIFF/WAVE file")
    off = 12
    fmt = None
    data = None
    while off + 8 <= len(blob):
        cid, size = struct.unpack_from("<4sI", blob, off)
        body_start = off + 8
        body_end = body_start + size
        if cid == b"fmt ":
            if size < 16 or body_end > len(blob):
                raise TruncatedChunkError("fmt chunk is truncated")
            fmt = struct.unpack_from("<HHIIHH", blob, body_start)
        elif cid == b"data":
            if body_end > len(blob):
                raise TruncatedChunkError(f"data chunk declares {size} bytes, {len(blob) - body_start} present")
            data = blob[body_start:body_end]
            break
        off = body_end + (size & 1)
    if fmt is None:
        raise TruncatedChunkError("missing fmt chunk")
    if data is None:
        raise TruncatedChunkError("missing data chunk")
    codec, channels, rate, _, block_align, bits = fmt
    if codec != 1 or bits != 16:
        raise UnsupportedCodecError(f"only 16-bit PCM is supported (format {codec}, {bits} bits)")
    if channels not in (1, 2):
        raise UnsupportedCodecError(f"unsupported channel count {channels}")
    if len(data) % block_align:
        raise TruncatedChunkError("data chunk ends mid-frame")
    if not data:
        raise EmptyAudioError("empty audio")
    pcm = np.frombuffer(data, dtype="<i2").astype(np.float64).reshape(-1, channels)
    return MusicClip(pcm.mean(axis=1) / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(clip: MusicClip) -> bytes:
    """Encode as mono 16-bit PCM."""
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(to_pcm16(clip.samples).tobytes())
    return buf.getvalue()


def load_wav(path: str | Path) -> MusicClip:
    return parse_wav(Path(path).read_bytes())


def save_wav(path: str | Path, clip: MusicClip) -> None:
    formats.write_bytes(path, write_wav(clip))


# -- spectral machinery ----------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(sample_rate: int, n_mels: int = N_MELS) -> np.ndarray:
    pts = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    return pts[1:-1]


def mel_filterbank(sample_rate: int, n_fft: int = N_FFT, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular HTK-scale filters, peak 1, shape ``(n_mels, n_fft // 2 + 1)``."""
    pts = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _check_stft_args(n_samples: int, n_fft: int, hop: int) -> None:
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ContractError(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise ContractError(f"hop must be in (0, n_fft], got {hop}")
    if n_samples < n_fft:
        raise ContractError(f"clip of {n_samples} samples is shorter than n_fft={n_fft}")


def frame_signal(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Unpadded frames: ``1 + (len - n_fft) // hop`` rows of ``n_fft`` samples."""
    _check_stft_args(len(x), n_fft, hop)
    return np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]


def stft_power(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """One-sided power spectrum ``|X|^2`` of Hann-windowed frames."""
    frames = frame_signal(np.asarray(x, dtype=np.float64), n_fft, hop)
    spec = np.fft.rfft(frames * hann(n_fft), axis=1)
    return spec.real ** 2 + spec.imag ** 2


def stft_mel(clip: MusicClip, n_fft: int = N_FFT, hop: int = HOP, n_mels: int = N_MELS) -> np.ndarray:
    """Mel power matrix, shape ``(frames, n_mels)``."""
    power = stft_power(clip.samples, n_fft, hop)
    return power @ mel_filterbank(clip.sample_rate, n_fft, n_mels).T


def power_to_db(p: np.ndarray, top_db: float = TOP_DB) -> np.ndarray:
    db = 10.0 * np.log10(np.maximum(p, 1e-10))
    return np.maximum(db, db.max() - top_db)


def chroma_matrix(sample_rate: int, n_fft: int = N_FFT) -> np.ndarray:
    """Binary bin-to-pitch-class map, shape ``(12, n_fft // 2 + 1)``; C is class 0."""
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    m = np.zeros((N_CHROMA, freqs.size))
    ok = freqs >= 27.5
    pc = (np.round(12 * np.log2(freqs[ok] / 440.0)).astype(int) + 9) % 12
    m[pc, np.nonzero(ok)[0]] = 1.0
    return m


def onset_strength(log_mel: np.ndarray) -> np.ndarray:
    """Half-wave rectified spectral flux summed over mel bands; first frame is 0."""
    flux = np.maximum(0.0, np.diff(log_mel, axis=0)).sum(axis=1)
    return np.concatenate([[0.0], flux])


def pick_beats(onset: np.ndarray, radius: int = BEAT_RADIUS) -> np.ndarray:
    """Indices of onset peaks: window maxima above mean + 1 std."""
    thresh = onset.mean() + onset.std()
    peaks = []
    n = onset.size
    for i in range(n):
        v = onset[i]
        if v <= thresh or v <= 0:
            continue
        lo, hi = max(0, i - radius), min(n, i + radius + 1)
        if v < onset[lo:hi].max():
            continue
        if peaks and i - peaks[-1] <= radius and onset[peaks[-1]] == v:
            continue
        peaks.append(i)
    return np.asarray(peaks, dtype=int)


def _frame_times(n_frames: int, sample_rate: int, n_fft: int, hop: int) -> np.ndarray:
    return (np.arange(n_frames) * hop + n_fft / 2) / sample_rate


def temporal_features(clip: MusicClip, fps: float = FPS, n_fft: int = N_FFT, hop: int = HOP,
                      n_mels: int = N_MELS) -> np.ndarray:
    """The ``(120, 35)`` per-motion-frame feature matrix of a 4-second clip."""
    expected = int(round(CLIP_SECONDS * clip.sample_rate))
    if len(clip) != expected:
        raise ContractError(f"temporal features need a {CLIP_SECONDS:g} s clip ({expected} samples), "
                            f"got {len(clip)}")
    n_out = int(round(CLIP_SECONDS * fps))
    x = clip.samples
    frames = frame_signal(x, n_fft, hop)
    power = stft_power(x, n_fft, hop)
    mel = power @ mel_filterbank(clip.sample_rate, n_fft, n_mels).T
    log_mel = 10.0 * np.log10(np.maximum(mel, 1e-10))

    mfcc = dct(log_mel, type=2, norm="ortho", axis=1)[:, :N_MFCC]
    chroma = power @ chroma_matrix(clip.sample_rate, n_fft).T
    peak = chroma.max(axis=1, keepdims=True)
    chroma = np.divide(chroma, peak, out=np.zeros_like(chroma), where=peak > 0)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    onset = onset_strength(power_to_db(mel))
    beats = pick_beats(onset)

    times = _frame_times(len(frames), clip.sample_rate, n_fft, hop)
    targets = np.arange(n_out) / fps
    dense = np.column_stack([mfcc, chroma, rms, onset])
    out = np.zeros((n_out, FEATURE_DIM))
    for c in range(dense.shape[1]):
        out[:, c] = np.interp(targets, times, dense[:, c])
    if beats.size:
        idx = np.clip(np.round(times[beats] * fps).astype(int), 0, n_out - 1)
        out[idx, COL_BEAT] = 1.0
    return out.astype(np.float32)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-D array."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape

    def axis(n_in, n_out):
        if n_in == 1 or n_out == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        i0 = np.minimum(np.floor(pos).astype(int), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    r0, r1, fr = axis(h, out_h)
    c0, c1, fc = axis(w, out_w)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def mel_image(clip: MusicClip, n_fft: int = N_FFT, hop: int = HOP, n_mels: int = N_MELS,
              size: int = IMAGE_SIZE) -> np.ndarray:
    """Log-mel image in ``[0, 1]``, shape ``(size, size, 3)``.

    Rows are mel bands (lowest first), columns are STFT frames.  A constant
    spectrogram maps to all zeros.
    """
    log_mel = 10.0 * np.log10(np.maximum(stft_mel(clip, n_fft, hop, n_mels), 1e-10)).T
    lo, hi = log_mel.min(), log_mel.max()
    if hi - lo <= 0:
        norm = np.zeros_like(log_mel)
    else:
        norm = (log_mel - lo) / (hi - lo)
    img = np.clip(bilinear_resize(norm, size, size), 0.0, 1.0).astype(np.float32)
    return np.repeat(img[:, :, None], 3, axis=2)


# -- containers ------------------------------------------------------------------

def save_features(path: str | Path, feats: np.ndarray, fps: float = FPS) -> None:
    if feats.ndim != 2 or feats.shape[1] != FEATURE_DIM:
        raise FormatError(f"feature matrix must be T x {FEATURE_DIM}, got {feats.shape}")
    formats.write_bytes(path, formats.pack_matrix(FEAT_MAGIC, fps, feats))


def load_features(path: str | Path) -> np.ndarray:
    return formats.unpack_matrix(Path(path).read_bytes(), FEAT_MAGIC, FEATURE_DIM)[1]


def save_mel_image(path: str | Path, image: np.ndarray) -> None:
    formats.write_bytes(path, formats.pack_image(MELI_MAGIC, image))


def load_mel_image(path: str | Path) -> np.ndarray:
    return formats.unpack_image(Path(path).read_bytes(), MELI_MAGIC)

