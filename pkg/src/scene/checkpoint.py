"""SCN1 model checkpoint files.

Layout (little-endian)::

    b"SCN1"
    8 x uint32     ModelConfig fields in declaration order
    float64 * n    every parameter tensor in ``param_shapes`` order, row-major
    uint32         CRC32 of all preceding bytes
"""

from __future__ import annotations

import dataclasses
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError
from .model import ModelConfig, SceneParams, param_shapes, params_from_arrays

MAGIC = b"SCN1"
_CONFIG_FIELDS = [f.name for f in dataclasses.fields(ModelConfig)]
_CONFIG_STRUCT = struct.Struct("<" + "I" * len(_CONFIG_FIELDS))


def encode_checkpoint(params: SceneParams) -> bytes:
    cfg = params.config
    parts = [MAGIC, _CONFIG_STRUCT.pack(*(getattr(cfg, f) for f in _CONFIG_FIELDS))]
    for _, t in params.named_tensors():
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(blob: bytes) -> SceneParams:
    header = len(MAGIC) + _CONFIG_STRUCT.size
    if len(blob) < header + 4 or blob[:4] != MAGIC:
        raise FormatError("not an SCN1 checkpoint")
    values = _CONFIG_STRUCT.unpack_from(blob, len(MAGIC))
    config = ModelConfig(**dict(zip(_CONFIG_FIELDS, values)))
    shapes = param_shapes(config)
    expected = header + 8 * sum(int(np.prod(s)) for _, s in shapes) + 4
    if len(blob) != expected:
        raise FormatError(f"checkpoint size {len(blob)} bytes, expected {expected}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise IntegrityError("checkpoint CRC32 mismatch")
    arrays = {}
    offset = header
    for name, shape in shapes:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
    return params_from_arrays(config, arrays)


def save_checkpoint(params: SceneParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(params))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> SceneParams:
    return decode_checkpoint(Path(path).read_bytes())
