"""Training loop: patches -> model -> codec proxy -> multi-stage loss -> AdamW."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .core.optim import AdamWState, adamw_step
from .core.tensor import Tape, Tensor, backward
from .errors import ConfigError, DimensionError, NonFiniteError
from .inference import enhance  # noqa: F401  (re-exported for callers)
from .losses import PERCEPTUAL_LOSSES, LossBreakdown, LossWeights, total_loss
from .model import ModelConfig, SceneParams, init_params, scene_forward
from .proxy import ProxyConfig, proxy_forward
from .semantics import EmbeddingProvider, make_provider

log = logging.getLogger(__name__)

LOG_HEADER = ["step", "perceptual", "bitrate", "pre", "post", "total", "ms"]


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "toy"
    seed: int = 0
    path: str | None = None


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 8
    patch_size: int = 256
    seed: int = 0
    flips: bool = True
    max_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    perceptual: str = "ms_ssim"
    weights: LossWeights = field(default_factory=LossWeights)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    dataset: str | None = None
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0
    log_path: str | None = None

    def __post_init__(self):
        for name in ("epochs", "batch_size", "patch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.patch_size % 16:
            raise ConfigError(f"patch_size must be divisible by 16, got {self.patch_size}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.perceptual not in PERCEPTUAL_LOSSES:
            raise ConfigError(f"unknown perceptual loss {self.perceptual!r}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale profile: C=8, E=2, D=16, 64-pixel patches, batch 4."""
        base = dict(
            batch_size=4,
            patch_size=64,
            model=ModelConfig.toy(),
            provider=ProviderConfig(kind="toy", seed=0),
        )
        base.update(overrides)
        return cls(**base)


class PatchSampler:
    """Deterministic random crops with independent horizontal/vertical flips.

    Every draw is seeded from ``(seed, epoch, step)`` so any step can be
    regenerated without replaying earlier ones.
    """

    def __init__(self, frames: Sequence[np.ndarray], patch_size: int, seed: int = 0, flips: bool = True):
        if not frames:
            raise ConfigError("dataset has no frames")
        self.frames = [np.asarray(f, dtype=np.float64) for f in frames]
        for i, f in enumerate(self.frames):
            if f.ndim != 3 or f.shape[0] != 3:
                raise DimensionError(f"frame {i} must be (3, H, W), got {f.shape}")
            if f.shape[1] < patch_size or f.shape[2] < patch_size:
                raise DimensionError(f"frame {i} ({f.shape[1]}x{f.shape[2]}) smaller than patch {patch_size}")
        self.patch_size = patch_size
        self.seed = seed
        self.flips = flips

    def __len__(self) -> int:
        return len(self.frames)

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch, 0]).permutation(len(self.frames))

    def sample(self, indices: Sequence[int], epoch: int, step: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, epoch, step + 1])
        p = self.patch_size
        out = np.empty((len(indices), 3, p, p))
        for k, i in enumerate(indices):
            f = self.frames[i]
            y = int(rng.integers(0, f.shape[1] - p + 1))
            x = int(rng.integers(0, f.shape[2] - p + 1))
            patch = f[:, y : y + p, x : x + p]
            flip_h, flip_v = rng.random() < 0.5, rng.random() < 0.5
            if self.flips and flip_h:
                patch = patch[:, :, ::-1]
            if self.flips and flip_v:
                patch = patch[:, ::-1, :]
            out[k] = patch
        return out


def train_step(
    batch: np.ndarray,
    params: SceneParams,
    provider: EmbeddingProvider,
    config: TrainConfig,
    opt_state: AdamWState,
    indices: Sequence[int] | None = None,
) -> tuple[SceneParams, LossBreakdown]:
    """One forward through model and proxy, one backward, one AdamW update."""
    frames = Tensor(batch)
    emb = Tensor(provider.embed(batch, indices))
    params.zero_grad()
    with Tape() as tape:
        enhanced = scene_forward(frames, params, emb, training=True)
        proxied, q = proxy_forward(enhanced, config.proxy)
        loss, breakdown = total_loss(
            frames, enhanced, proxied, q, config.weights, PERCEPTUAL_LOSSES[config.perceptual]
        )
    if not math.isfinite(breakdown.total):
        raise NonFiniteError("total loss is not finite")
    if loss.requires_grad:
        backward(tape, loss)
    named = params.as_dict()
    for name, t in named.items():
        if t.grad is not None and not np.isfinite(t.grad).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
    adamw_step(
        named,
        opt_state,
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    return params, breakdown


@dataclass
class TrainState:
    """Everything needed to resume: position in the schedule plus AdamW moments."""

    step: int = 0
    epoch: int = 0
    position: int = 0
    optimizer: AdamWState = field(default_factory=AdamWState)

    def save(self, path) -> None:
        arrays = {}
        for name, m in self.optimizer.exp_avg.items():
            arrays[f"m/{name}"] = m
            arrays[f"v/{name}"] = self.optimizer.exp_avg_sq[name]
        meta = json.dumps(
            {"step": self.step, "epoch": self.epoch, "position": self.position, "adam_step": self.optimizer.step}
        )
        np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "TrainState":
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            opt = AdamWState(step=meta["adam_step"])
            for key in z.files:
                if key.startswith("m/"):
                    opt.exp_avg[key[2:]] = z[key].copy()
                elif key.startswith("v/"):
                    opt.exp_avg_sq[key[2:]] = z[key].copy()
        return cls(meta["step"], meta["epoch"], meta["position"], opt)


@dataclass
class TrainResult:
    params: SceneParams
    history: list[LossBreakdown]
    state: TrainState
    checkpoint: Path | None = None


def steps_per_epoch(num_samples: int, batch_size: int) -> int:
    return -(-num_samples // batch_size)


def _frames_of(dataset) -> list[np.ndarray]:
    frames = []
    for item in dataset:
        if hasattr(item, "frames"):
            frames.extend(np.asarray(f).reshape(3, *np.asarray(f).shape[-2:]) for f in item.frames)
        else:
            frames.append(np.asarray(item))
    return frames


def train(
    dataset,
    config: TrainConfig,
    provider: EmbeddingProvider | None = None,
    resume: tuple | None = None,
    out_dir=None,
) -> TrainResult:
    """Run ``epochs`` passes (or ``max_steps`` steps) over the dataset frames.

    ``dataset`` is a sequence of (3, H, W) frames or of clips with a
    ``frames`` attribute. ``resume`` is ``(checkpoint_path, state_path)``.
    Writes the CSV log and periodic checkpoints when paths are configured.
    """
    frames = _frames_of(dataset)
    sampler = PatchSampler(frames, config.patch_size, config.seed, config.flips)
    if provider is None:
        provider = make_provider(
            config.provider.kind, config.model.embed_dim, config.provider.seed, config.provider.path
        )
    if provider.embed_dim != config.model.embed_dim:
        raise DimensionError(f"provider D={provider.embed_dim} != model embed_dim={config.model.embed_dim}")

    if resume is not None:
        params = load_checkpoint(resume[0])
        if params.config != config.model:
            raise ConfigError("checkpoint model config differs from the training config")
        state = TrainState.load(resume[1])
    else:
        params = init_params(config.model, seed=config.seed)
        state = TrainState()

    out = Path(out_dir) if out_dir else None
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else (out / "checkpoints" if out else None)
    log_path = Path(config.log_path) if config.log_path else (out / "train_log.csv" if out else None)
    writer = None
    log_file = None
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        fresh = resume is None or not log_path.exists()
        log_file = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(log_file)
        if fresh:
            writer.writerow(LOG_HEADER)

    per_epoch = steps_per_epoch(len(sampler), config.batch_size)
    total_steps = config.epochs * per_epoch
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)
    history: list[LossBreakdown] = []
    last_ckpt = None
    try:
        while state.step < total_steps:
            order = sampler.epoch_order(state.epoch)
            start = state.position * config.batch_size
            idx = order[start : start + config.batch_size]
            batch = sampler.sample(idx, state.epoch, state.position)
            t0 = time.perf_counter()
            params, breakdown = train_step(batch, params, provider, config, state.optimizer, idx)
            elapsed_ms = (time.perf_counter() - t0) * 1000.0
            history.append(breakdown)
            state.step += 1
            state.position += 1
            if state.position >= per_epoch:
                state.position = 0
                state.epoch += 1
            if writer is not None:
                writer.writerow([state.step] + [repr(v) for v in breakdown.as_row()] + [f"{elapsed_ms:.3f}"])
            if ckpt_dir is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                last_ckpt = save_snapshot(params, state, ckpt_dir)
            if state.step % 50 == 0:
                log.info("step %d total %.6f", state.step, breakdown.total)
    finally:
        if log_file is not None:
            log_file.close()

    if ckpt_dir is not None:
        last_ckpt = save_snapshot(params, state, ckpt_dir, final=True)
    return TrainResult(params, history, state, last_ckpt)


def save_snapshot(params: SceneParams, state: TrainState, directory, final: bool = False) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = "final" if final else f"step_{state.step:06d}"
    path = save_checkpoint(params, directory / f"{stem}.scn")
    state.save(directory / f"{stem}.state.npz")
    return path
