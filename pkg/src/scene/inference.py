"""Inference path: the pre-processor alone, no codec proxy."""

from __future__ import annotations

import numpy as np

from .checkpoint import load_checkpoint
from .errors import DimensionError
from .model import SceneParams, scene_forward
from .semantics import EmbeddingProvider


def enhance(
    frames,
    checkpoint,
    provider: EmbeddingProvider,
    indices=None,
    clamp: bool = True,
) -> np.ndarray:
    """Enhance (N, 3, H, W) frames in [0, 1] with a checkpoint path or params."""
    params = checkpoint if isinstance(checkpoint, SceneParams) else load_checkpoint(checkpoint)
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    n = params.config.unshuffle_factor
    if x.ndim != 4 or x.shape[2] % n or x.shape[3] % n:
        raise DimensionError(f"frame shape {x.shape} is not divisible by unshuffle factor {n}")
    emb = provider.embed(x, indices)
    return scene_forward(x, params, emb, training=not clamp).data
