"""The SCENE enhancement network.

Data flow: pixel-unshuffle -> 3x3 stem -> assembled block 1 (coefficients
from the semantic embedding) -> assembled block 2 (coefficients from block
1's features) -> 3x3 tail -> pixel-shuffle -> + input frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import ops
from .core.tensor import Tensor, add, as_tensor, clamp, make_op, reshape, take, transpose
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class ModelConfig:
    unshuffle_factor: int = 2
    block_channels: int = 64
    convs_per_block: int = 3
    num_base_kernels: int = 4
    kernel_size: int = 3
    control_hidden_dim: int = 64
    embed_dim: int = 1152
    input_channels: int = 3

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig.{name} must be positive")
        if self.kernel_size % 2 == 0:
            raise ConfigError("ModelConfig.kernel_size must be odd")
        if self.kernel_size not in (1, 3):
            raise ConfigError("ModelConfig.kernel_size must be 1 or 3")

    @classmethod
    def toy(cls) -> "ModelConfig":
        """Desk-scale profile used by tests and the overfit smoke run."""
        return cls(block_channels=8, num_base_kernels=2, embed_dim=16, control_hidden_dim=8)

    @property
    def packed_channels(self) -> int:
        return self.unshuffle_factor**2 * self.input_channels

    @property
    def coeff_dim(self) -> int:
        return self.convs_per_block * self.block_channels * self.num_base_kernels


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor


@dataclass
class ControlModuleParams:
    hidden: ConvParams
    out: ConvParams


@dataclass
class AssembledBlockParams:
    bases: list[Tensor]  # per layer, (E, C, C, k, k)
    biases: list[Tensor]  # per layer, (C,)


@dataclass
class SceneParams:
    config: ModelConfig
    stem: ConvParams
    block1: AssembledBlockParams
    control1: ControlModuleParams
    block2: AssembledBlockParams
    control2: ControlModuleParams
    tail: ConvParams

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        """Parameters in checkpoint order."""
        yield "stem.weight", self.stem.weight
        yield "stem.bias", self.stem.bias
        for tag, block, ctrl in (
            ("block1", self.block1, self.control1),
            ("block2", self.block2, self.control2),
        ):
            for i, (k, b) in enumerate(zip(block.bases, block.biases)):
                yield f"{tag}.layer{i}.bases", k
                yield f"{tag}.layer{i}.bias", b
            cname = "control" + tag[-1]
            yield f"{cname}.hidden.weight", ctrl.hidden.weight
            yield f"{cname}.hidden.bias", ctrl.hidden.bias
            yield f"{cname}.out.weight", ctrl.out.weight
            yield f"{cname}.out.bias", ctrl.out.bias
        yield "tail.weight", self.tail.weight
        yield "tail.bias", self.tail.bias

    def as_dict(self) -> dict[str, Tensor]:
        return dict(self.named_tensors())

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_tensors())

    def zero_grad(self) -> None:
        for _, t in self.named_tensors():
            t.grad = None


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    c, e, k = config.block_channels, config.num_base_kernels, config.kernel_size
    p, hd = config.packed_channels, config.control_hidden_dim
    shapes = [("stem.weight", (c, p, 3, 3)), ("stem.bias", (c,))]
    for tag, src in (("1", config.embed_dim), ("2", c)):
        for i in range(config.convs_per_block):
            shapes.append((f"block{tag}.layer{i}.bases", (e, c, c, k, k)))
            shapes.append((f"block{tag}.layer{i}.bias", (c,)))
        shapes += [
            (f"control{tag}.hidden.weight", (hd, src, 1, 1)),
            (f"control{tag}.hidden.bias", (hd,)),
            (f"control{tag}.out.weight", (config.coeff_dim, hd, 1, 1)),
            (f"control{tag}.out.bias", (config.coeff_dim,)),
        ]
    shapes += [("tail.weight", (p, c, 3, 3)), ("tail.bias", (p,))]
    return shapes


def param_count(config: ModelConfig) -> int:
    """Closed-form trainable parameter count."""
    c, e, k = config.block_channels, config.num_base_kernels, config.kernel_size
    p, hd, d = config.packed_channels, config.control_hidden_dim, config.embed_dim
    layers = config.convs_per_block
    stem = 9 * p * c + c
    tail = 9 * c * p + p
    block = layers * (e * c * c * k * k + c)
    control_out = hd * config.coeff_dim + config.coeff_dim
    control1 = d * hd + hd + control_out
    control2 = c * hd + hd + control_out
    return stem + tail + 2 * block + control1 + control2


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> SceneParams:
    """Kaiming-uniform convs, zero tail, and control heads emitting 1/E."""
    rng = np.random.default_rng(seed)
    c, e, k = config.block_channels, config.num_base_kernels, config.kernel_size
    hd = config.control_hidden_dim

    def leaf(arr, name):
        return Tensor(arr, requires_grad=True, name=name)

    def block(tag):
        bases = [
            leaf(_kaiming_uniform(rng, (e, c, c, k, k), c * k * k), f"{tag}.layer{i}.bases")
            for i in range(config.convs_per_block)
        ]
        biases = [leaf(np.zeros(c), f"{tag}.layer{i}.bias") for i in range(config.convs_per_block)]
        return AssembledBlockParams(bases, biases)

    def control(tag, src):
        hidden = ConvParams(
            leaf(_kaiming_uniform(rng, (hd, src, 1, 1), src), f"{tag}.hidden.weight"),
            leaf(np.zeros(hd), f"{tag}.hidden.bias"),
        )
        out = ConvParams(
            leaf(np.zeros((config.coeff_dim, hd, 1, 1)), f"{tag}.out.weight"),
            leaf(np.full(config.coeff_dim, 1.0 / e), f"{tag}.out.bias"),
        )
        return ControlModuleParams(hidden, out)

    p = config.packed_channels
    stem = ConvParams(
        leaf(_kaiming_uniform(rng, (c, p, 3, 3), p * 9), "stem.weight"), leaf(np.zeros(c), "stem.bias")
    )
    block1 = block("block1")
    control1 = control("control1", config.embed_dim)
    block2 = block("block2")
    control2 = control("control2", c)
    tail = ConvParams(leaf(np.zeros((p, c, 3, 3)), "tail.weight"), leaf(np.zeros(p), "tail.bias"))
    return SceneParams(config, stem, block1, control1, block2, control2, tail)


def params_from_arrays(config: ModelConfig, arrays: dict[str, np.ndarray]) -> SceneParams:
    """Rebuild a SceneParams from named arrays (same names as ``named_tensors``)."""
    params = init_params(config, seed=0)
    for name, t in params.named_tensors():
        if name not in arrays:
            raise DimensionError(f"missing parameter {name!r}")
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != t.shape:
            raise DimensionError(f"parameter {name!r} has shape {arr.shape}, expected {t.shape}")
        t.data = np.array(arr)
    return params


def as_embedding_grid(embedding) -> Tensor:
    """Accept (N, D) vectors or (N, D, h, w) grids; vectors become 1x1 grids."""
    emb = as_tensor(embedding)
    if emb.ndim == 2:
        emb = reshape(emb, emb.shape + (1, 1))
    if emb.ndim != 4:
        raise DimensionError(f"embedding must be (N, D) or (N, D, h, w), got {emb.shape}")
    return emb


def control_forward(source: Tensor, params: ControlModuleParams) -> Tensor:
    """1x1 conv -> ReLU -> 1x1 conv -> global average pool, flattened to (N, L*C*E)."""
    source = as_tensor(source)
    expected = params.hidden.weight.shape[1]
    if source.ndim != 4 or source.shape[1] != expected:
        raise DimensionError(f"control module expects {expected} source channels, got {source.shape}")
    h = ops.relu(ops.conv2d(source, params.hidden.weight, params.hidden.bias))
    coeff = ops.conv2d(h, params.out.weight, params.out.bias)
    pooled = ops.global_avg_pool(coeff)
    return reshape(pooled, (source.shape[0], pooled.shape[1]))


def assemble_kernels(coeff: Tensor, bases: Tensor) -> Tensor:
    """Per-output-channel mixing of base kernels.

    coeff: (N, C, E); bases: (E, C_out, C_in, k, k). Returns (N, C_out, C_in, k, k)
    with ``K[n, c] = sum_i coeff[n, c, i] * bases[i, c]``.
    """
    coeff, bases = as_tensor(coeff), as_tensor(bases)
    if coeff.ndim != 3 or bases.ndim != 5:
        raise DimensionError(f"assemble_kernels got coeff {coeff.shape}, bases {bases.shape}")
    n, c, e = coeff.shape
    if bases.shape[0] != e:
        raise DimensionError(f"coefficients mix {e} kernels but {bases.shape[0]} bases given")
    if bases.shape[1] != c:
        raise DimensionError(f"coefficients cover {c} output channels, bases have {bases.shape[1]}")
    tail_shape = bases.shape[2:]
    flat = bases.data.reshape(e, c, -1)  # (E, C, M)
    out = np.zeros((n, c, flat.shape[2]))
    for i in range(e):
        out += coeff.data[:, :, i, None] * flat[i][None]
    out = out.reshape((n, c) + tail_shape)

    def bwd(g):
        gf = g.reshape(n, c, -1)
        gcoeff = np.einsum("ncm,ecm->nce", gf, flat)
        gbases = np.einsum("nce,ncm->ecm", coeff.data, gf).reshape(bases.shape)
        return (gcoeff, gbases)

    return make_op("assemble_kernels", out, (coeff, bases), bwd)


def split_coefficients(coeff: Tensor, config: ModelConfig) -> list[Tensor]:
    """(N, L*C*E) -> L tensors of shape (N, C, E), ordered (layer, channel, base)."""
    n = coeff.shape[0]
    c, e, layers = config.block_channels, config.num_base_kernels, config.convs_per_block
    grid = reshape(coeff, (n, layers, c, e))
    per_layer = transpose(grid, (1, 0, 2, 3))
    return [reshape(take(per_layer, np.array([i]), axis=0), (n, c, e)) for i in range(layers)]


def assembled_conv(x: Tensor, coeff: Tensor, bases: Tensor, bias: Tensor) -> Tensor:
    kernels = assemble_kernels(coeff, bases)
    return ops.conv2d(x, kernels, bias)


def assembled_block_forward(x: Tensor, block: AssembledBlockParams, coeffs: list[Tensor]) -> Tensor:
    """Assembled convs with ReLU between them (none after the last)."""
    x = as_tensor(x)
    if len(coeffs) != len(block.bases):
        raise DimensionError(f"block has {len(block.bases)} layers, got {len(coeffs)} coefficient sets")
    channels = block.bases[0].shape[1]
    if x.ndim != 4 or x.shape[1] != channels:
        raise DimensionError(f"assembled block expects {channels} channels, got {x.shape}")
    y = x
    for i, (bases, bias, coeff) in enumerate(zip(block.bases, block.biases, coeffs)):
        y = assembled_conv(y, coeff, bases, bias)
        if i < len(block.bases) - 1:
            y = ops.relu(y)
    return y


def scene_forward(frame, params: SceneParams, embedding, training: bool = True) -> Tensor:
    """Enhance ``frame`` (N, 3, H, W); clamps to [0, 1] only when not training."""
    cfg = params.config
    frame = as_tensor(frame)
    if frame.ndim != 4 or frame.shape[1] != cfg.input_channels:
        raise DimensionError(f"frame must be (N, {cfg.input_channels}, H, W), got {frame.shape}")
    emb = as_embedding_grid(embedding)
    if emb.shape[0] != frame.shape[0]:
        raise DimensionError(f"embedding batch {emb.shape[0]} != frame batch {frame.shape[0]}")
    if emb.shape[1] != cfg.embed_dim:
        raise DimensionError(f"embedding dim {emb.shape[1]} != model embed_dim {cfg.embed_dim}")

    n = cfg.unshuffle_factor
    x = ops.pixel_unshuffle(frame, n)
    feat = ops.conv2d(x, params.stem.weight, params.stem.bias)
    coeff1 = split_coefficients(control_forward(emb, params.control1), cfg)
    feat = assembled_block_forward(feat, params.block1, coeff1)
    coeff2 = split_coefficients(control_forward(feat, params.control2), cfg)
    feat = assembled_block_forward(feat, params.block2, coeff2)
    residual = ops.pixel_shuffle(ops.conv2d(feat, params.tail.weight, params.tail.bias), n)
    out = add(frame, residual)
    if not training:
        out = clamp(out, 0.0, 1.0)
    return out
