"""Multi-stage training objective.

total = lambda_p * perceptual + lambda_b * bitrate + lambda_1 * pre + lambda_2 * post

``pre`` and ``post`` are L1 distances from the input frame to the enhanced
frame before and after the codec proxy. The perceptual term defaults to
``1 - MS-SSIM(proxied, input)``; any callable with the same signature can be
swapped in (for instance a differentiable VMAF).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .core import ops
from .core.ssim import ms_ssim
from .core.tensor import Tensor, add, mul, sub
from .errors import ConfigError, DimensionError, NonFiniteError
from .proxy import bitrate_estimate

PerceptualLoss = Callable[[Tensor, Tensor], Tensor]


def ms_ssim_perceptual(proxied: Tensor, reference: Tensor) -> Tensor:
    return sub(1.0, ms_ssim(proxied, reference))


PERCEPTUAL_LOSSES: dict[str, PerceptualLoss] = {"ms_ssim": ms_ssim_perceptual}


@dataclass(frozen=True)
class LossWeights:
    lambda_p: float = 1e-2
    lambda_b: float = 1.0
    lambda_1: float = 5.0
    lambda_2: float = 1.0

    def __post_init__(self):
        for name in ("lambda_p", "lambda_b", "lambda_1", "lambda_2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    perceptual: float
    bitrate: float
    pre: float
    post: float
    total: float

    def as_row(self) -> list[float]:
        return [self.perceptual, self.bitrate, self.pre, self.post, self.total]


def weighted_total(weights: LossWeights, perceptual, bitrate, pre, post):
    """The weighted sum in a fixed evaluation order (floats or Tensors)."""
    return (
        weights.lambda_p * perceptual
        + weights.lambda_b * bitrate
        + weights.lambda_1 * pre
        + weights.lambda_2 * post
    )


def total_loss(
    input_frame: Tensor,
    enhanced: Tensor,
    proxied: Tensor,
    q_symbols: Tensor,
    weights: LossWeights = LossWeights(),
    perceptual_fn: PerceptualLoss = ms_ssim_perceptual,
) -> tuple[Tensor, LossBreakdown]:
    """Return the differentiable total and its per-term breakdown.

    Terms with zero weight are left out of the graph so they contribute no
    gradient at all; their values are still reported.
    """
    if not (input_frame.shape == enhanced.shape == proxied.shape):
        raise DimensionError(
            f"loss inputs differ in shape: {input_frame.shape}, {enhanced.shape}, {proxied.shape}"
        )
    terms = {
        "perceptual": perceptual_fn(proxied, input_frame),
        "bitrate": bitrate_estimate(q_symbols),
        "pre": ops.l1_loss(enhanced, input_frame),
        "post": ops.l1_loss(proxied, input_frame),
    }
    lambdas = {
        "perceptual": weights.lambda_p,
        "bitrate": weights.lambda_b,
        "pre": weights.lambda_1,
        "post": weights.lambda_2,
    }
    values = {k: t.item() for k, t in terms.items()}
    for k, v in values.items():
        if v != v or v in (float("inf"), float("-inf")):
            raise NonFiniteError(f"loss term {k!r} is not finite")

    total = None
    for k, t in terms.items():
        if lambdas[k] == 0:
            continue
        term = mul(t, lambdas[k])
        total = term if total is None else add(total, term)
    if total is None:
        total = mul(terms["pre"], 0.0)

    breakdown = LossBreakdown(
        perceptual=values["perceptual"],
        bitrate=values["bitrate"],
        pre=values["pre"],
        post=values["post"],
        total=weighted_total(weights, values["perceptual"], values["bitrate"], values["pre"], values["post"]),
    )
    return total, breakdown
