"""Finite-difference gradient checking and independent reference implementations.

Nothing here imports the library's numerical kernels: the oracles are written
the long way round (explicit window loops, scipy's DCT, brute-force
convolution) so agreement with the library is meaningful.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn

from scene.core.tensor import Tape, Tensor, backward

FD_STEP = 1e-5
FD_TOL = 1e-4
SEEDS = (0, 1, 2, 3, 4)


def analytic_grads(fn, inputs: list[np.ndarray]) -> tuple[float, list[np.ndarray]]:
    leaves = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    with Tape() as tape:
        out = fn(*leaves)
    backward(tape, out)
    return out.item(), [t.grad for t in leaves]


def _value(fn, inputs) -> float:
    return float(fn(*[Tensor(x) for x in inputs]).item())


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn, inputs, h: float = FD_STEP, max_coords: int = 40, directions: int = 3, seed: int = 0):
    """Compare tape gradients with central differences.

    Checks up to ``max_coords`` individual coordinates per input plus a few
    random directional derivatives. Returns the worst relative error.
    """
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    rng = np.random.default_rng(seed)
    _, grads = analytic_grads(fn, inputs)
    worst = 0.0
    for k, x in enumerate(inputs):
        flat_idx = np.arange(x.size)
        if x.size > max_coords:
            flat_idx = rng.choice(x.size, size=max_coords, replace=False)
        num = np.empty(len(flat_idx))
        for j, i in enumerate(flat_idx):
            plus = [v.copy() for v in inputs]
            minus = [v.copy() for v in inputs]
            plus[k].flat[i] += h
            minus[k].flat[i] -= h
            num[j] = (_value(fn, plus) - _value(fn, minus)) / (2 * h)
        ana = grads[k].ravel()[flat_idx]
        # coordinates whose derivative is tiny are judged on absolute error
        scale = max(np.abs(num).max(initial=0.0), np.abs(ana).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(num - ana).max(initial=0.0) / scale))
    for _ in range(directions):
        dirs = [rng.standard_normal(x.shape) for x in inputs]
        plus = [x + h * d for x, d in zip(inputs, dirs)]
        minus = [x - h * d for x, d in zip(inputs, dirs)]
        num = (_value(fn, plus) - _value(fn, minus)) / (2 * h)
        ana = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-12))
    return worst


# ----------------------------------------------------------------- oracles


def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Direct 'same' zero-padded cross-correlation with explicit loops."""
    n, cin, hgt, wid = x.shape
    cout, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, cout, hgt, wid))
    for dy in range(k):
        for dx in range(k):
            window = xp[:, :, dy : dy + hgt, dx : dx + wid]
            out += np.einsum("nchw,oc->nohw", window, w[:, :, dy, dx])
    if b is not None:
        out += b[None, :, None, None]
    return out


def naive_unshuffle(x: np.ndarray, f: int) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.empty((n, c * f * f, h // f, w // f))
    for ch in range(c):
        for dy in range(f):
            for dx in range(f):
                out[:, ch * f * f + dy * f + dx] = x[:, ch, dy::f, dx::f]
    return out


def _gauss_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter2d_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    h, w = img.shape[0] - k + 1, img.shape[1] - k + 1
    out = np.zeros((h, w))
    for dy in range(k):
        for dx in range(k):
            out += win[dy, dx] * img[dy : dy + h, dx : dx + w]
    return out


def naive_ms_ssim(a: np.ndarray, b: np.ndarray, scales: int = 5, data_range: float = 1.0) -> float:
    """Textbook MS-SSIM on (N, C, H, W), one 2-D plane at a time."""
    weights = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])[:scales]
    weights = weights / weights.sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    win = _gauss_window()
    vals = []
    for n in range(a.shape[0]):
        for c in range(a.shape[1]):
            x, y = a[n, c].astype(np.float64), b[n, c].astype(np.float64)
            prod = 1.0
            for s in range(scales):
                mx, my = _filter2d_valid(x, win), _filter2d_valid(y, win)
                sxx = _filter2d_valid(x * x, win) - mx * mx
                syy = _filter2d_valid(y * y, win) - my * my
                sxy = _filter2d_valid(x * y, win) - mx * my
                cs = ((2 * sxy + c2) / (sxx + syy + c2)).mean()
                if s == scales - 1:
                    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
                    ssim = (lum * (2 * sxy + c2) / (sxx + syy + c2)).mean()
                    prod *= max(ssim, 0.0) ** weights[s]
                else:
                    prod *= max(cs, 0.0) ** weights[s]
                    hh, ww = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
                    x = x[:hh, :ww].reshape(hh // 2, 2, ww // 2, 2).mean(axis=(1, 3))
                    y = y[:hh, :ww].reshape(hh // 2, 2, ww // 2, 2).mean(axis=(1, 3))
            vals.append(prod)
    return float(np.mean(vals))


ANNEX_K = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)  # fmt: skip


def libjpeg_table(quality: int) -> np.ndarray:
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor(ANNEX_K * scale / 100 + 0.5), 1, 255)


def naive_jpeg(image: np.ndarray, quality: int = 50) -> np.ndarray:
    """Block-by-block JPEG luma simulation on (N, C, H, W) with H, W multiples of 8."""
    table = libjpeg_table(quality)
    out = np.empty_like(image, dtype=np.float64)
    n, c, h, w = image.shape
    for i in range(n):
        for ch in range(c):
            for y in range(0, h, 8):
                for x in range(0, w, 8):
                    block = image[i, ch, y : y + 8, x : x + 8] * 255.0 - 128.0
                    q = np.round(dctn(block, norm="ortho") / table)
                    out[i, ch, y : y + 8, x : x + 8] = (idctn(q * table, norm="ortho") + 128.0) / 255.0
    return out


def closed_form_bd(rate_ratio: float) -> float:
    """BD-rate of a curve whose bitrates are ``rate_ratio`` times the anchor's."""
    return (rate_ratio - 1.0) * 100.0
