"""Little-endian binary containers for frame matrices and mel images.

Frame matrices (``MOTN`` motion, ``FEAT`` music features)::

    magic[4] | version u32 | rate f32 | rows u32 | cols u32 | f32 payload (row-major)

Mel images (``MELI``)::

    magic[4] | version u32 | height u32 | width u32 | channels u32 | f32 payload
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sIfII")
_IMAGE_HEADER = struct.Struct("<4sIIII")


def pack_matrix(magic: bytes, rate: float, matrix: np.ndarray) -> bytes:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise FormatError(f"{magic.decode()} payload must be 2-D, got shape {m.shape}")
    return _MATRIX_HEADER.pack(magic, VERSION, float(rate), m.shape[0], m.shape[1]) + m.tobytes()


def unpack_matrix(blob: bytes, magic: bytes, cols: int | None = None) -> tuple[float, np.ndarray]:
    if len(blob) < _MATRIX_HEADER.size:
        raise FormatError(f"{magic.decode()} file truncated in header")
    got, version, rate, rows, ncols = _MATRIX_HEADER.unpack_from(blob)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {version}")
    if cols is not None and ncols != cols:
        raise FormatError(f"{magic.decode()} has {ncols} columns, expected {cols}")
    need = _MATRIX_HEADER.size + 4 * rows * ncols
    if len(blob) != need:
        raise FormatError(f"{magic.decode()} payload is {len(blob)} bytes, expected {need}")
    data = np.frombuffer(blob, dtype="<f4", offset=_MATRIX_HEADER.size).reshape(rows, ncols)
    return float(rate), data.astype(np.float32)


def pack_image(magic: bytes, image: np.ndarray) -> bytes:
    im = np.ascontiguousarray(image, dtype="<f4")
    if im.ndim != 3:
        raise FormatError(f"image must be H x W x C, got shape {im.shape}")
    return _IMAGE_HEADER.pack(magic, VERSION, *im.shape) + im.tobytes()


def unpack_image(blob: bytes, magic: bytes) -> np.ndarray:
    if len(blob) < _IMAGE_HEADER.size:
        raise FormatError(f"{magic.decode()} file truncated in header")
    got, version, h, w, c = _IMAGE_HEADER.unpack_from(blob)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {version}")
    need = _IMAGE_HEADER.size + 4 * h * w * c
    if len(blob) != need:
        raise FormatError(f"{magic.decode()} payload is {len(blob)} bytes, expected {need}")
    return np.frombuffer(blob, dtype="<f4", offset=_IMAGE_HEADER.size).reshape(h, w, c).astype(np.float32)


def write_bytes(path: str | Path, blob: bytes) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(blob)
