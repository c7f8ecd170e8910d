"""Differentiable multi-scale structural similarity on the gradient tape."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from . import ops
from .tensor import Tensor, as_tensor, mean, mul, power

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MIN_SIDE = 16


def gaussian_taps(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    return g / g.sum()


def feasible_scales(height: int, width: int, requested: int = 5) -> int:
    """Largest scale count <= ``requested`` with min(H, W) >= 16 * 2**(s-1)."""
    if requested < 1:
        raise DimensionError(f"scales must be >= 1, got {requested}")
    side = min(height, width)
    if side < MIN_SIDE:
        raise DimensionError(f"MS-SSIM needs H, W >= {MIN_SIDE}, got {height}x{width}")
    s = 1
    while s < requested and side >= MIN_SIDE * 2**s:
        s += 1
    return s


def scale_weights(scales: int) -> np.ndarray:
    w = np.asarray(MS_SSIM_WEIGHTS[:scales])
    return w / w.sum()


def _ssim_components(x: Tensor, y: Tensor, taps: np.ndarray, data_range: float):
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    blur = lambda t: ops.separable_filter_valid(t, taps)  # noqa: E731
    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = blur(x * x) - mu_xx
    var_y = blur(y * y) - mu_yy
    cov = blur(x * y) - mu_xy
    cs_map = (2.0 * cov + c2) / (var_x + var_y + c2)
    lum_map = (2.0 * mu_xy + c1) / (mu_xx + mu_yy + c1)
    # per-(batch, channel) means
    cs = mean(cs_map, axis=(2, 3))
    ssim = mean(lum_map * cs_map, axis=(2, 3))
    return ssim, cs


def ms_ssim(
    a: Tensor,
    b: Tensor,
    scales: int = 5,
    data_range: float = 1.0,
    return_scales: bool = False,
):
    """MS-SSIM averaged over batch and channels.

    Inputs smaller than 16 * 2**(scales-1) fall back to the largest feasible
    scale count with the leading weights renormalised; pass
    ``return_scales=True`` to get ``(value, scales_used)``.
    Contrast-structure terms are clipped at zero before exponentiation.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"ms_ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 4:
        raise DimensionError(f"ms_ssim expects (N, C, H, W), got {a.shape}")
    used = feasible_scales(a.shape[2], a.shape[3], scales)
    weights = scale_weights(used)
    taps = gaussian_taps()

    value = None
    x, y = a, b
    for level in range(used):
        ssim, cs = _ssim_components(x, y, taps, data_range)
        last = level == used - 1
        term = power(ops.relu(ssim if last else cs), float(weights[level]))
        value = term if value is None else mul(value, term)
        if not last:
            x, y = ops.avg_pool2(x), ops.avg_pool2(y)
    result = mean(value)
    return (result, used) if return_scales else result
