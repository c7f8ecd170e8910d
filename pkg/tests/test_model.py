import numpy as np
import pytest

from helpers import FD_TOL, SEEDS, check_gradients, naive_conv2d
from scene.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from scene.core import Tensor, mean, power
from scene.errors import ConfigError, DimensionError, FormatError, IntegrityError
from scene.model import (
    AssembledBlockParams,
    ControlModuleParams,
    ConvParams,
    ModelConfig,
    assemble_kernels,
    assembled_block_forward,
    control_forward,
    init_params,
    param_count,
    param_shapes,
    params_from_arrays,
    scene_forward,
    split_coefficients,
)

SMALL = ModelConfig(block_channels=4, convs_per_block=2, num_base_kernels=2, control_hidden_dim=3, embed_dim=5)


def _random_params(config, seed):
    """Every tensor random, so no gradient path is trivially zero."""
    rng = np.random.default_rng(seed)
    arrays = {name: rng.normal(0, 0.4, shape) for name, shape in param_shapes(config)}
    return params_from_arrays(config, arrays)


def test_param_count_closed_form_matches_enumeration():
    for cfg in (ModelConfig(), ModelConfig.toy(), SMALL):
        assert param_count(cfg) == sum(int(np.prod(s)) for _, s in param_shapes(cfg))
        assert init_params(cfg).num_parameters() == param_count(cfg)


def test_default_param_count_frozen():
    assert param_count(ModelConfig()) == 1_076_812


@pytest.mark.parametrize("field,value", [("block_channels", 0), ("kernel_size", 2), ("kernel_size", 5)])
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        ModelConfig(**{field: value})


def test_init_is_identity():
    cfg = ModelConfig.toy()
    params = init_params(cfg, seed=3)
    x = np.random.default_rng(0).uniform(-0.2, 1.2, (2, 3, 16, 16))
    emb = np.random.default_rng(1).standard_normal((2, cfg.embed_dim))
    out = scene_forward(Tensor(x), params, Tensor(emb), training=True).data
    assert np.array_equal(out, x)
    clamped = scene_forward(Tensor(x), params, Tensor(emb), training=False).data
    assert np.array_equal(clamped, np.clip(x, 0, 1))


def test_init_controls_emit_uniform_mixing():
    cfg = ModelConfig.toy()
    params = init_params(cfg)
    emb = np.random.default_rng(0).standard_normal((3, cfg.embed_dim, 2, 2))
    coeff = control_forward(Tensor(emb), params.control1).data
    np.testing.assert_array_equal(coeff, np.full((3, cfg.coeff_dim), 1.0 / cfg.num_base_kernels))


def test_split_coefficients_order():
    cfg = SMALL
    n = 2
    flat = np.arange(n * cfg.coeff_dim, dtype=np.float64).reshape(n, -1)
    parts = split_coefficients(Tensor(flat), cfg)
    grid = flat.reshape(n, cfg.convs_per_block, cfg.block_channels, cfg.num_base_kernels)
    for layer, p in enumerate(parts):
        np.testing.assert_array_equal(p.data, grid[:, layer])


def test_assembled_one_hot_reduces_to_fixed_stack():
    rng = np.random.default_rng(0)
    c, e, layers = 4, 3, 3
    bases = [rng.standard_normal((e, c, c, 3, 3)) for _ in range(layers)]
    biases = [rng.standard_normal(c) for _ in range(layers)]
    pick = rng.integers(0, e, size=(layers, c))
    coeffs = []
    for layer in range(layers):
        onehot = np.zeros((1, c, e))
        onehot[0, np.arange(c), pick[layer]] = 1.0
        coeffs.append(Tensor(onehot))
    x = rng.standard_normal((1, c, 7, 6))
    block = AssembledBlockParams([Tensor(b) for b in bases], [Tensor(b) for b in biases])
    got = assembled_block_forward(Tensor(x), block, coeffs).data

    ref = x
    for layer in range(layers):
        kernel = np.stack([bases[layer][pick[layer, o], o] for o in range(c)])
        ref = naive_conv2d(ref, kernel, biases[layer])
        if layer < layers - 1:
            ref = np.maximum(ref, 0)
    assert np.abs(got - ref).max() <= 1e-12


def test_assemble_shape_errors():
    with pytest.raises(DimensionError):
        assemble_kernels(Tensor(np.zeros((1, 4, 2))), Tensor(np.zeros((3, 4, 4, 3, 3))))
    with pytest.raises(DimensionError):
        assemble_kernels(Tensor(np.zeros((1, 5, 2))), Tensor(np.zeros((2, 4, 4, 3, 3))))


@pytest.mark.parametrize("seed", SEEDS)
def test_assemble_kernels_gradient(seed):
    rng = np.random.default_rng(seed)
    coeff, bases = rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 3, 4, 3, 3))
    w = rng.standard_normal((2, 3, 4, 3, 3))
    assert check_gradients(lambda a, b: mean(assemble_kernels(a, b) * Tensor(w)), [coeff, bases], seed=seed) < FD_TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_control_module_gradient(seed):
    rng = np.random.default_rng(seed)
    src = rng.standard_normal((2, 5, 3, 3))
    w1, b1 = rng.standard_normal((4, 5, 1, 1)), rng.standard_normal(4)
    w2, b2 = rng.standard_normal((6, 4, 1, 1)), rng.standard_normal(6)

    def f(s, a, b, c, d):
        ctrl = ControlModuleParams(ConvParams(a, b), ConvParams(c, d))
        return mean(power(control_forward(s, ctrl), 2.0))

    assert check_gradients(f, [src, w1, b1, w2, b2], seed=seed) < FD_TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_assembled_conv_gradient(seed):
    rng = np.random.default_rng(seed)
    c, e = 3, 2
    x = rng.standard_normal((2, c, 5, 5))
    coeff = rng.standard_normal((2, c, e))
    bases = rng.standard_normal((e, c, c, 3, 3))
    bias = rng.standard_normal(c)

    def f(xx, cc, bb, bi):
        block = AssembledBlockParams([bb, bb], [bi, bi])
        return mean(power(assembled_block_forward(xx, block, [cc, cc]), 2.0))

    assert check_gradients(f, [x, coeff, bases, bias], seed=seed) < FD_TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_scene_forward_gradient(seed):
    keys = ["stem.weight", "block1.layer1.bases", "control1.hidden.weight", "control2.out.weight", "tail.weight"]
    named = _random_params(SMALL, seed).as_dict()
    rng = np.random.default_rng(seed + 100)
    frame = rng.uniform(0, 1, (2, 3, 8, 8))
    emb = rng.standard_normal((2, SMALL.embed_dim))
    target = rng.standard_normal((2, 3, 8, 8))

    def f(fr, em, *leaves):
        params = _random_params(SMALL, seed)
        for k, t in zip(keys, leaves):
            _swap(params, k, t)
        return mean(scene_forward(fr, params, em) * Tensor(target))

    arrays = [named[k].data for k in keys]
    assert check_gradients(f, [frame, emb, *arrays], seed=seed, max_coords=15) < FD_TOL


def _swap(params, name, tensor):
    parts = name.split(".")
    if parts[0].startswith("block"):
        block = getattr(params, parts[0])
        layer = int(parts[1][5:])
        (block.bases if parts[2] == "bases" else block.biases)[layer] = tensor
    elif parts[0].startswith("control"):
        setattr(getattr(getattr(params, parts[0]), parts[1]), parts[2], tensor)
    else:
        setattr(getattr(params, parts[0]), parts[1], tensor)


def test_scene_forward_shape_errors():
    params = init_params(SMALL)
    with pytest.raises(DimensionError):
        scene_forward(Tensor(np.zeros((1, 3, 8, 8))), params, Tensor(np.zeros((1, 7))))
    with pytest.raises(DimensionError):
        scene_forward(Tensor(np.zeros((1, 3, 8, 8))), params, Tensor(np.zeros((2, 5))))
    with pytest.raises(DimensionError):
        scene_forward(Tensor(np.zeros((1, 3, 7, 8))), params, Tensor(np.zeros((1, 5))))


# ------------------------------------------------------------ checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    params = _random_params(ModelConfig.toy(), 0)
    path = save_checkpoint(params, tmp_path / "m.scn")
    back = load_checkpoint(path)
    assert back.config == params.config
    for (na, a), (nb, b) in zip(params.named_tensors(), back.named_tensors()):
        assert na == nb
        assert a.data.tobytes() == b.data.tobytes()
    assert encode_checkpoint(back) == path.read_bytes()


def test_checkpoint_corruption_detected():
    blob = bytearray(encode_checkpoint(init_params(ModelConfig.toy())))
    blob[100] ^= 0x01
    with pytest.raises(IntegrityError):
        decode_checkpoint(bytes(blob))
    with pytest.raises(FormatError):
        decode_checkpoint(bytes(blob[:-9]))
    with pytest.raises(FormatError):
        decode_checkpoint(b"XXXX" + bytes(blob[4:]))


def test_params_from_arrays_checks_shapes():
    arrays = {name: np.zeros(shape) for name, shape in param_shapes(SMALL)}
    arrays["tail.bias"] = np.zeros(5)
    with pytest.raises(DimensionError):
        params_from_arrays(SMALL, arrays)
