"""Deterministic synthetic frames and clips for tests and desk-scale runs."""

from __future__ import annotations

import numpy as np


def synthetic_frame(height: int, width: int, seed: int = 0, phase: float = 0.0) -> np.ndarray:
    """A (3, H, W) frame in [0.05, 0.95]: gradients, flat shapes, edges and texture.

    ``phase`` shifts the moving content, so consecutive phases form a clip.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)

    base = np.empty((3, height, width))
    for c in range(3):
        a, b, d = rng.uniform(-0.3, 0.3, size=3)
        base[c] = 0.5 + a * xx + b * yy + d * xx * yy

    for _ in range(3):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        cx = cx + 0.05 * phase
        ry, rx = rng.uniform(0.08, 0.25, size=2)
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        colour = rng.uniform(0.15, 0.85, size=3)
        base[:, mask] = 0.6 * base[:, mask] + 0.4 * colour[:, None]

    y0, x0 = rng.uniform(0.1, 0.5, size=2)
    rect = (yy > y0) & (yy < y0 + 0.3) & (xx > x0) & (xx < x0 + 0.35)
    freq = rng.uniform(6.0, 12.0)
    angle = rng.uniform(0, np.pi)
    stripes = 0.12 * np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
    base[:, rect] += stripes[rect]

    base += rng.normal(0.0, 0.01, size=base.shape)
    return np.clip(base, 0.05, 0.95)


def synthetic_clip(frames: int, height: int, width: int, seed: int = 0) -> np.ndarray:
    """(T, 3, H, W) clip whose shapes and texture drift over time."""
    return np.stack([synthetic_frame(height, width, seed=seed, phase=0.5 * t) for t in range(frames)])
