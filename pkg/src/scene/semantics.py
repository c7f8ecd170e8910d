"""Sources of per-frame semantic embedding grids.

The real system uses a frozen vision-language encoder producing 1152-d
features. Here embeddings come either from an SEMB file written by an
external script, or from a frozen random conv stack for desk-scale runs.

SEMB layout (little-endian)::

    b"SEMB"
    uint32 version (1), D, h, w, frame_count
    float32 * frame_count * D * h * w    grids, frame-major, then (D, h, w)
    uint32 CRC32 of all preceding bytes

To export real encoder features, dump each frame's patch-token grid as a
(D, h, w) float32 array in dataset order and call
:func:`write_embedding_file`; a pooled embedding is simply h = w = 1.
"""

from __future__ import annotations

import struct
import zlib
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, FormatError, IntegrityError

MAGIC = b"SEMB"
VERSION = 1
_HEADER = struct.Struct("<5I")


class EmbeddingProvider(ABC):
    """Maps a batch of frames to (N, D, h, w) embedding grids."""

    embed_dim: int

    @abstractmethod
    def embed(self, frames: np.ndarray, indices: Sequence[int] | None = None) -> np.ndarray:
        """``frames`` is (N, 3, H, W); ``indices`` are dataset frame indices."""


class ToyProvider(EmbeddingProvider):
    """Frozen random conv stack: four stride-2 3x3 convs, 3 -> D channels."""

    def __init__(self, seed: int = 0, embed_dim: int = 1152):
        if embed_dim < 1:
            raise DimensionError("embed_dim must be positive")
        self.seed = seed
        self.embed_dim = embed_dim
        rng = np.random.default_rng(seed)
        widths = [3, min(32, embed_dim), min(64, embed_dim), min(128, embed_dim), embed_dim]
        self._layers = []
        for c_in, c_out in zip(widths[:-1], widths[1:]):
            w = rng.normal(0.0, np.sqrt(2.0 / (9 * c_in)), size=(c_out, c_in, 3, 3))
            b = rng.normal(0.0, 0.01, size=c_out)
            self._layers.append((w, b))

    @staticmethod
    def _conv_stride2(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        n, c, h, wd = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ho, wo = (h + 1) // 2, (wd + 1) // 2
        cols = np.empty((n, c, 3, 3, ho, wo))
        for i in range(3):
            for j in range(3):
                cols[:, :, i, j] = xp[:, :, i : i + 2 * ho : 2, j : j + 2 * wo : 2]
        out = np.tensordot(w.reshape(w.shape[0], -1), cols.reshape(n, c * 9, ho * wo), axes=([1], [1]))
        return out.transpose(1, 0, 2).reshape(n, w.shape[0], ho, wo) + b[None, :, None, None]

    def embed(self, frames, indices=None) -> np.ndarray:
        x = np.asarray(frames, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"frames must be (N, 3, H, W), got {x.shape}")
        if x.shape[2] < 16 or x.shape[3] < 16:
            raise DimensionError(f"toy provider needs H, W >= 16, got {x.shape[2]}x{x.shape[3]}")
        for i, (w, b) in enumerate(self._layers):
            x = self._conv_stride2(x, w, b)
            if i < len(self._layers) - 1:
                x = np.maximum(x, 0.0)
        return x


class FileProvider(EmbeddingProvider):
    """Embeddings read from an SEMB file, associated by frame index."""

    def __init__(self, grids: np.ndarray):
        self.grids = grids  # (frames, D, h, w) float64
        self.embed_dim = grids.shape[1]

    @classmethod
    def open(cls, path) -> "FileProvider":
        return cls(read_embedding_file(path))

    def __len__(self) -> int:
        return self.grids.shape[0]

    def embed(self, frames=None, indices=None) -> np.ndarray:
        if indices is None:
            raise DimensionError("file-backed embeddings need frame indices")
        idx = np.asarray(indices, dtype=np.intp)
        if np.any(idx < 0) or np.any(idx >= len(self)):
            raise IndexError(f"frame index out of range 0..{len(self) - 1}: {list(idx)}")
        return self.grids[idx].copy()


def write_embedding_file(path, grids: np.ndarray) -> Path:
    grids = np.asarray(grids)
    if grids.ndim != 4:
        raise DimensionError(f"grids must be (frames, D, h, w), got {grids.shape}")
    frames, d, h, w = grids.shape
    body = MAGIC + _HEADER.pack(VERSION, d, h, w, frames) + grids.astype("<f4").tobytes()
    path = Path(path)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    return path


def read_embedding_file(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    head = len(MAGIC) + _HEADER.size
    if len(blob) < head or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not an SEMB file")
    version, d, h, w, frames = _HEADER.unpack_from(blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported SEMB version {version}")
    expected = head + 4 * frames * d * h * w + 4
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(blob)}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise IntegrityError(f"{path}: CRC32 mismatch")
    data = np.frombuffer(blob, dtype="<f4", count=frames * d * h * w, offset=head)
    return data.reshape(frames, d, h, w).astype(np.float64)


def make_provider(kind: str, embed_dim: int, seed: int = 0, path: str | None = None) -> EmbeddingProvider:
    if kind == "toy":
        return ToyProvider(seed=seed, embed_dim=embed_dim)
    if kind == "file":
        if not path:
            raise FormatError("file provider needs a path")
        provider = FileProvider.open(path)
        if provider.embed_dim != embed_dim:
            raise DimensionError(f"embedding file has D={provider.embed_dim}, model expects {embed_dim}")
        return provider
    raise FormatError(f"unknown embedding provider {kind!r}")
