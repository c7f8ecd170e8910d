import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import FD_TOL, SEEDS, analytic_grads, check_gradients
from scene.core import Tensor, l1_loss
from scene.errors import ConfigError, DimensionError
from scene.fixtures import synthetic_frame
from scene.losses import LossBreakdown, LossWeights, total_loss, weighted_total
from scene.model import ModelConfig, param_shapes, params_from_arrays, scene_forward
from scene.proxy import ProxyConfig, proxy_forward


def _const(value):
    return lambda *_: Tensor(np.array(value))


def test_default_weights():
    w = LossWeights()
    assert (w.lambda_p, w.lambda_b, w.lambda_1, w.lambda_2) == (0.01, 1.0, 5.0, 1.0)


def test_negative_weight_rejected():
    with pytest.raises(ConfigError):
        LossWeights(lambda_b=-1.0)


def test_unit_components_total():
    assert weighted_total(LossWeights(), 1.0, 1.0, 1.0, 1.0) == 7.01


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=8, max_size=8))
def test_breakdown_total_is_exact_weighted_sum(vals):
    w = LossWeights(*vals[:4])
    p, b, pre, post = vals[4:]
    assert weighted_total(w, p, b, pre, post) == w.lambda_p * p + w.lambda_b * b + w.lambda_1 * pre + w.lambda_2 * post


def _batch(seed=0, size=32):
    x = np.stack([synthetic_frame(size, size, seed=seed + i) for i in range(2)])
    enh = np.clip(x + np.random.default_rng(seed).normal(0, 0.02, x.shape), 0, 1)
    proxied, q = proxy_forward(Tensor(enh), ProxyConfig())
    return x, enh, proxied, q


def test_breakdown_matches_components():
    x, enh, proxied, q = _batch()
    total, bd = total_loss(Tensor(x), Tensor(enh), proxied, q)
    assert bd.pre == l1_loss(Tensor(enh), Tensor(x)).item()
    assert bd.post == l1_loss(proxied, Tensor(x)).item()
    assert bd.total == weighted_total(LossWeights(), bd.perceptual, bd.bitrate, bd.pre, bd.post)
    assert abs(total.item() - bd.total) < 1e-12
    assert isinstance(bd, LossBreakdown) and len(bd.as_row()) == 5


def test_perceptual_plugin_seam():
    x, enh, proxied, q = _batch()
    _, bd = total_loss(Tensor(x), Tensor(enh), proxied, q, perceptual_fn=_const(0.25))
    assert bd.perceptual == 0.25


def test_identical_inputs_zero_distortion_terms():
    x = np.full((1, 3, 32, 32), 128 / 255)
    proxied, q = proxy_forward(Tensor(x), ProxyConfig())
    _, bd = total_loss(Tensor(x), Tensor(x), proxied, q)
    assert bd.pre == 0.0 and bd.bitrate == 0.0
    assert bd.post < 1e-12 and abs(bd.perceptual) < 1e-9


def test_shape_mismatch():
    x, enh, proxied, q = _batch()
    with pytest.raises(DimensionError):
        total_loss(Tensor(x[:1]), Tensor(enh), proxied, q)


@pytest.mark.parametrize("term", ["lambda_p", "lambda_b", "lambda_1", "lambda_2"])
def test_zero_weight_term_contributes_no_gradient(term):
    x, enh, _, _ = _batch()
    base = dict(lambda_p=0.0, lambda_b=0.0, lambda_1=0.0, lambda_2=0.0)
    only = LossWeights(**{**base, term: 1.0})
    none = LossWeights(**base)

    def loss(weights):
        def fn(e):
            proxied, q = proxy_forward(e, ProxyConfig())
            return total_loss(Tensor(x), e, proxied, q, weights)[0]

        return fn

    _, (g_none,) = analytic_grads(loss(none), [enh])
    _, (g_only,) = analytic_grads(loss(only), [enh])
    assert np.all(g_none == 0.0)
    assert np.abs(g_only).max() > 0


@pytest.mark.parametrize("seed", SEEDS)
def test_composite_gradient_through_model_and_proxy(seed):
    cfg = ModelConfig(block_channels=4, convs_per_block=2, num_base_kernels=2, control_hidden_dim=3, embed_dim=5)
    rng = np.random.default_rng(seed)
    arrays = {name: rng.normal(0, 0.2, shape) for name, shape in param_shapes(cfg)}
    frame = np.stack([synthetic_frame(32, 32, seed=seed + i) for i in range(2)])
    emb = rng.standard_normal((2, cfg.embed_dim))
    proxy = ProxyConfig(rounding_mode="soft", quality=75)

    def f(stem_w, tail_w, fr):
        params = params_from_arrays(cfg, arrays)
        params.stem.weight = stem_w
        params.tail.weight = tail_w
        enhanced = scene_forward(fr, params, Tensor(emb))
        proxied, q = proxy_forward(enhanced, proxy)
        return total_loss(fr, enhanced, proxied, q)[0]

    err = check_gradients(f, [arrays["stem.weight"], arrays["tail.weight"], frame], seed=seed, max_coords=12)
    assert err < FD_TOL
