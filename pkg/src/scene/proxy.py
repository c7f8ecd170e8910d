"""Differentiable JPEG-style codec proxy used only during training.

Each channel is treated as an independent luma plane: 8x8 blocks, orthonormal
DCT-II, quality-scaled quantisation with a differentiable rounding rule,
dequantisation and inverse DCT. There is no colour transform, chroma
subsampling or entropy coding; the bitrate term is estimated from the
quantised symbols instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core.tensor import Tensor, add, as_tensor, div, make_op, mul, reshape, take, transpose
from .errors import ConfigError

BLOCK = 8

# ITU-T T.81 Annex K, Table K.1
ANNEX_K_LUMA = (
    (16, 11, 10, 16, 24, 40, 51, 61),
    (12, 12, 14, 19, 26, 58, 60, 55),
    (14, 13, 16, 24, 40, 57, 69, 56),
    (14, 17, 22, 29, 51, 87, 80, 62),
    (18, 22, 37, 56, 68, 109, 103, 77),
    (24, 35, 55, 64, 81, 104, 113, 92),
    (49, 64, 78, 87, 103, 121, 120, 101),
    (72, 92, 95, 98, 112, 100, 103, 99),
)

ROUNDING_MODES = ("straight_through", "soft")


@dataclass(frozen=True)
class ProxyConfig:
    quality: int = 50
    rounding_mode: str = "straight_through"
    tau: float = 1.0
    luma_quant_table: tuple = field(default=ANNEX_K_LUMA)

    def __post_init__(self):
        if not isinstance(self.quality, (int, np.integer)) or not 1 <= self.quality <= 100:
            raise ConfigError(f"quality must be an integer in 1..100, got {self.quality!r}")
        if self.rounding_mode not in ROUNDING_MODES:
            raise ConfigError(f"rounding_mode must be one of {ROUNDING_MODES}, got {self.rounding_mode!r}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        table = np.asarray(self.luma_quant_table, dtype=np.float64)
        if table.shape != (BLOCK, BLOCK) or np.any(table <= 0):
            raise ConfigError("luma_quant_table must be 8x8 with positive entries")
        object.__setattr__(self, "luma_quant_table", tuple(tuple(float(v) for v in row) for row in table))

    def scaled_table(self) -> np.ndarray:
        return scaled_quant_table(self.luma_quant_table, self.quality)


def quality_scale(quality: int) -> float:
    if not 1 <= quality <= 100:
        raise ConfigError(f"quality must be in 1..100, got {quality}")
    return 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality


def scaled_quant_table(table, quality: int) -> np.ndarray:
    """libjpeg quality scaling with round-half-up and clamping to [1, 255]."""
    base = np.asarray(table, dtype=np.float64)
    return np.clip(np.floor(base * quality_scale(quality) / 100.0 + 0.5), 1.0, 255.0)


def dct_matrix(n: int = BLOCK) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0, :] = np.sqrt(1.0 / n)
    return m


_DCT = dct_matrix()


def _block_transform(x: Tensor, m: np.ndarray, name: str) -> Tensor:
    x = as_tensor(x)
    out = m @ x.data @ m.T
    return make_op(name, out, (x,), lambda g: (m.T @ g @ m,))


def dct8x8(blocks) -> Tensor:
    """Orthonormal 2-D DCT-II over the last two axes."""
    return _block_transform(blocks, _DCT, "dct8x8")


def idct8x8(coeffs) -> Tensor:
    return _block_transform(coeffs, _DCT.T, "idct8x8")


def _reflect_index(n: int, target: int) -> np.ndarray:
    idx = np.arange(target)
    if n == 1:
        return np.zeros(target, dtype=np.intp)
    period = 2 * (n - 1)
    idx = idx % period
    return np.where(idx < n, idx, period - idx)


@dataclass(frozen=True)
class BlockLayout:
    height: int
    width: int
    padded_height: int
    padded_width: int

    @property
    def blocks_y(self) -> int:
        return self.padded_height // BLOCK

    @property
    def blocks_x(self) -> int:
        return self.padded_width // BLOCK


def blockify(image) -> tuple[Tensor, BlockLayout]:
    """(N, C, H, W) -> (N, C, n_blocks, 8, 8) in row-major block order.

    Non-multiple-of-8 sizes are reflect-padded; :func:`deblockify` crops back.
    """
    x = as_tensor(image)
    n, c, h, w = x.shape
    ph, pw = -(-h // BLOCK) * BLOCK, -(-w // BLOCK) * BLOCK
    layout = BlockLayout(h, w, ph, pw)
    if ph != h:
        x = take(x, _reflect_index(h, ph), axis=2)
    if pw != w:
        x = take(x, _reflect_index(w, pw), axis=3)
    by, bx = layout.blocks_y, layout.blocks_x
    x = reshape(x, (n, c, by, BLOCK, bx, BLOCK))
    x = transpose(x, (0, 1, 2, 4, 3, 5))
    return reshape(x, (n, c, by * bx, BLOCK, BLOCK)), layout


def deblockify(blocks, layout: BlockLayout) -> Tensor:
    b = as_tensor(blocks)
    n, c = b.shape[:2]
    by, bx = layout.blocks_y, layout.blocks_x
    x = reshape(b, (n, c, by, bx, BLOCK, BLOCK))
    x = transpose(x, (0, 1, 2, 4, 3, 5))
    x = reshape(x, (n, c, layout.padded_height, layout.padded_width))
    if layout.padded_height != layout.height:
        x = take(x, np.arange(layout.height), axis=2)
    if layout.padded_width != layout.width:
        x = take(x, np.arange(layout.width), axis=3)
    return x


def differentiable_round(x, mode: str = "straight_through", tau: float = 1.0) -> Tensor:
    """Rounding with a usable gradient.

    ``straight_through``: exact rounding forward, identity backward.
    ``soft``: ``x - tau * sin(2 pi x) / (2 pi)``, smooth everywhere.
    """
    x = as_tensor(x)
    if mode == "straight_through":
        return make_op("round_ste", np.round(x.data), (x,), lambda g: (g,))
    if mode == "soft":
        frac = x.data - np.round(x.data)
        out = x.data - tau * np.sin(2.0 * np.pi * frac) / (2.0 * np.pi)
        slope = 1.0 - tau * np.cos(2.0 * np.pi * frac)
        return make_op("round_soft", out, (x,), lambda g: (g * slope,))
    raise ConfigError(f"unknown rounding mode {mode!r}")


def quantize(coeff, config: ProxyConfig) -> Tensor:
    table = config.scaled_table()
    return differentiable_round(div(coeff, table), config.rounding_mode, config.tau)


def dequantize(q, config: ProxyConfig) -> Tensor:
    return mul(q, config.scaled_table())


def proxy_forward(image, config: ProxyConfig) -> tuple[Tensor, Tensor]:
    """Return ``(distorted_image, quantised_symbols)`` for an image in [0, 1]."""
    x = as_tensor(image)
    shifted = add(mul(x, 255.0), -128.0)
    blocks, layout = blockify(shifted)
    q = quantize(dct8x8(blocks), config)
    recon = deblockify(idct8x8(dequantize(q, config)), layout)
    return div(add(recon, 128.0), 255.0), q


def bitrate_estimate(q) -> Tensor:
    """Mean of log2(1 + |q|) over all symbols; a smooth entropy stand-in."""
    q = as_tensor(q)
    mag = np.abs(q.data)
    out = np.log2(1.0 + mag).mean()
    count = q.size

    def bwd(g):
        return (g * np.sign(q.data) / ((1.0 + mag) * np.log(2.0) * count),)

    return make_op("bitrate_estimate", out, (q,), bwd)
