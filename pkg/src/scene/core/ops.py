"""Differentiable image operations used by the SCENE model, proxy and losses."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, make_op


def _require_4d(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{op} expects a (N, C, H, W) tensor, got shape {x.shape}")


def _patches(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    """(N, C, H+k-1, W+k-1) -> (N, H*W, C*k*k) im2col matrix."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, :h, :w]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, h * w, c * k * k)


def _fold(cols: np.ndarray, c: int, k: int, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`_patches`: scatter-add columns back to padded input."""
    n = cols.shape[0]
    cols = cols.reshape(n, h, w, c, k, k)
    out = np.zeros((n, c, h + k - 1, w + k - 1))
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + h, j : j + w] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution with zero padding.

    ``weight`` is (C_out, C_in, k, k) shared over the batch, or
    (N, C_out, C_in, k, k) with a separate kernel per sample (used by the
    assembled convolutions). ``bias`` is (C_out,) or (N, C_out).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _require_4d(x, "conv2d")
    n, c_in, h, w = x.shape
    per_sample = weight.ndim == 5
    if weight.ndim not in (4, 5):
        raise DimensionError(f"conv2d weight must be 4-D or 5-D, got {weight.shape}")
    c_out, wc_in, k, k2 = weight.shape[-4:]
    if k != k2 or k not in (1, 3):
        raise DimensionError(f"conv2d supports square 1x1 or 3x3 kernels, got {k}x{k2}")
    if wc_in != c_in:
        raise DimensionError(f"conv2d input has {c_in} channels, weight expects {wc_in}")
    if per_sample and weight.shape[0] != n:
        raise DimensionError(f"per-sample weight batch {weight.shape[0]} != input batch {n}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape[-1] != c_out or bias.ndim not in (1, 2):
            raise DimensionError(f"conv2d bias shape {bias.shape} does not match C_out={c_out}")

    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _patches(xp, k, h, w)  # (n, hw, c_in k k)
    if per_sample:
        wmat = weight.data.reshape(n, c_out, -1)
        out = np.matmul(cols, wmat.transpose(0, 2, 1))  # (n, hw, c_out)
    else:
        wmat = weight.data.reshape(c_out, -1)
        out = cols @ wmat.T
    if bias is not None:
        b = bias.data if bias.ndim == 2 else bias.data[None, :]
        out = out + b[:, None, :]
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(n, c_out, h, w)

    def bwd(g):
        gmat = g.reshape(n, c_out, h * w).transpose(0, 2, 1)  # (n, hw, c_out)
        if per_sample:
            gw = np.matmul(gmat.transpose(0, 2, 1), cols).reshape(weight.shape)
            gcols = np.matmul(gmat, wmat)
        else:
            gw = np.tensordot(gmat, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
            gcols = gmat @ wmat
        gx = _fold(gcols, c_in, k, h, w)
        if pad:
            gx = gx[:, :, pad:-pad, pad:-pad]
        gb = None
        if bias is not None:
            gb = g.sum(axis=(2, 3)) if bias.ndim == 2 else g.sum(axis=(0, 2, 3))
        return (np.ascontiguousarray(gx), gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op("conv2d", out, inputs, bwd)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_op("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def pixel_unshuffle(x: Tensor, factor: int) -> Tensor:
    """Space-to-depth: sub-pixel (dy, dx) of channel c goes to channel c*f*f + dy*f + dx."""
    x = as_tensor(x)
    _require_4d(x, "pixel_unshuffle")
    n, c, h, w = x.shape
    f = int(factor)
    if f < 1 or h % f or w % f:
        raise DimensionError(f"pixel_unshuffle: {h}x{w} not divisible by factor {factor}")
    out = (
        x.data.reshape(n, c, h // f, f, w // f, f)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * f * f, h // f, w // f)
    )

    def bwd(g):
        return (
            g.reshape(n, c, f, f, h // f, w // f).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h, w),
        )

    return make_op("pixel_unshuffle", out, (x,), bwd)


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """Depth-to-space; exact inverse of :func:`pixel_unshuffle`."""
    x = as_tensor(x)
    _require_4d(x, "pixel_shuffle")
    n, cf, h, w = x.shape
    f = int(factor)
    if f < 1 or cf % (f * f):
        raise DimensionError(f"pixel_shuffle: {cf} channels not divisible by {f * f}")
    c = cf // (f * f)
    out = x.data.reshape(n, c, f, f, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * f, w * f)

    def bwd(g):
        return (
            g.reshape(n, c, h, f, w, f).transpose(0, 1, 3, 5, 2, 4).reshape(n, cf, h, w),
        )

    return make_op("pixel_shuffle", out, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    x = as_tensor(x)
    _require_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return make_op(
        "global_avg_pool",
        out,
        (x,),
        lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),),
    )


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference; the subgradient at ties is 0."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"l1_loss shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    count = diff.size

    def bwd(g):
        s = np.sign(diff) * (g / count)
        return (s, -s)

    return make_op("l1_loss", np.abs(diff).mean(), (a, b), bwd)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling with stride 2; odd trailing rows/columns are dropped."""
    x = as_tensor(x)
    _require_4d(x, "avg_pool2")
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    out = x.data[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def bwd(g):
        gx = np.zeros(x.shape)
        up = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
        gx[:, :, : 2 * h2, : 2 * w2] = up
        return (gx,)

    return make_op("avg_pool2", out, (x,), bwd)


def separable_filter_valid(x: Tensor, taps: np.ndarray) -> Tensor:
    """Per-channel 'valid' correlation with the outer product ``taps x taps``."""
    x = as_tensor(x)
    _require_4d(x, "separable_filter_valid")
    taps = np.asarray(taps, dtype=np.float64)
    k = taps.size
    n, c, h, w = x.shape
    if h < k or w < k:
        raise DimensionError(f"filter of size {k} does not fit a {h}x{w} input")
    ho, wo = h - k + 1, w - k + 1

    rows = np.zeros((n, c, ho, w))
    for i in range(k):
        rows += taps[i] * x.data[:, :, i : i + ho, :]
    out = np.zeros((n, c, ho, wo))
    for j in range(k):
        out += taps[j] * rows[:, :, :, j : j + wo]

    def bwd(g):
        grows = np.zeros((n, c, ho, w))
        for j in range(k):
            grows[:, :, :, j : j + wo] += taps[j] * g
        gx = np.zeros(x.shape)
        for i in range(k):
            gx[:, :, i : i + ho, :] += taps[i] * grows
        return (gx,)

    return make_op("separable_filter_valid", out, (x,), bwd)
