"""Semantic- and codec-aware video pre-processing at desk scale.

Submodules load lazily so that importing the inference path never pulls in
the training-only codec proxy.
"""

import importlib

from .errors import (
    ConfigError,
    DimensionError,
    EncoderError,
    FormatError,
    IntegrityError,
    NonFiniteError,
    SceneError,
    TapeError,
)

__version__ = "0.1.0"

_LAZY = {
    "load_checkpoint": "checkpoint",
    "save_checkpoint": "checkpoint",
    "enhance": "inference",
    "LossBreakdown": "losses",
    "LossWeights": "losses",
    "total_loss": "losses",
    "ModelConfig": "model",
    "SceneParams": "model",
    "init_params": "model",
    "param_count": "model",
    "scene_forward": "model",
    "ProxyConfig": "proxy",
    "proxy_forward": "proxy",
    "TrainConfig": "trainer",
    "train": "trainer",
    "bd_rate": "eval",
    "compare_pipelines": "eval",
}


def __getattr__(name):
    if name in _LAZY:
        return getattr(importlib.import_module(f".{_LAZY[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "ConfigError",
    "DimensionError",
    "EncoderError",
    "FormatError",
    "IntegrityError",
    "NonFiniteError",
    "SceneError",
    "TapeError",
    *_LAZY,
]
