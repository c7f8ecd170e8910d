from .ops import (
    avg_pool2,
    conv2d,
    global_avg_pool,
    l1_loss,
    pixel_shuffle,
    pixel_unshuffle,
    relu,
    separable_filter_valid,
)
from .optim import AdamWState, adamw_step
from .ssim import feasible_scales, ms_ssim
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    div,
    mean,
    mul,
    power,
    reshape,
    sub,
    sum_,
    take,
    transpose,
)

__all__ = [
    "AdamWState",
    "Tape",
    "Tensor",
    "adamw_step",
    "add",
    "as_tensor",
    "avg_pool2",
    "backward",
    "clamp",
    "conv2d",
    "div",
    "feasible_scales",
    "global_avg_pool",
    "l1_loss",
    "mean",
    "ms_ssim",
    "mul",
    "pixel_shuffle",
    "pixel_unshuffle",
    "power",
    "relu",
    "reshape",
    "separable_filter_valid",
    "sub",
    "sum_",
    "take",
    "transpose",
]
