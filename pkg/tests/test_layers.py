import numpy as np
import pytest

from flowdeblur.gradcheck import check_conv, check_deconv
from flowdeblur.layers import (AdamState, adam_step, concat_channels,
                               conv2d_backward, conv2d_forward,
                               deconv2d_backward, deconv2d_forward,
                               leaky_relu_backward, leaky_relu_forward,
                               split_channels, tanh_backward, tanh_forward,
                               xavier_init)
from flowdeblur.model import ModelConfig, build_flow_net


def naive_strided_conv(x, weight, stride, pad):
    """Reference cross-correlation written with plain loops."""
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    y = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + kh,
                               j * stride:j * stride + kw]
                    y[b, oc, i, j] = np.sum(patch * weight[oc])
    return y


def test_conv_1x1_identity():
    x = np.random.default_rng(0).standard_normal((1, 1, 5, 5))
    w = np.ones((1, 1, 1, 1))
    y, _ = conv2d_forward(x, w, np.zeros(1), 1)
    assert np.array_equal(y, x)


def test_conv_impulse_response():
    x = np.zeros((1, 1, 7, 7))
    x[0, 0, 3, 3] = 1.0
    w = np.ones((1, 1, 3, 3))
    y, _ = conv2d_forward(x, w, np.zeros(1), 1)
    assert np.all(y[0, 0, 2:5, 2:5] == 1.0)
    assert y[0, 0].sum() == 9.0


def test_conv_matches_naive_reference():
    rng = np.random.default_rng(1)
    for k, s in ((7, 2), (5, 2), (5, 1), (3, 1), (3, 2), (1, 1)):
        x = rng.standard_normal((2, 3, 8, 10))
        w = rng.standard_normal((4, 3, k, k))
        b = rng.standard_normal(4)
        y, _ = conv2d_forward(x, w, b, s)
        ref = naive_strided_conv(x, w, s, k // 2) + b[None, :, None, None]
        assert y.shape == ref.shape
        assert np.allclose(y, ref, atol=1e-10)


def test_conv_output_dims_halve():
    x = np.zeros((1, 3, 64, 64))
    w = np.zeros((8, 3, 7, 7))
    y, _ = conv2d_forward(x, w, np.zeros(8), 2)
    assert y.shape == (1, 8, 32, 32)


def test_conv_channel_mismatch():
    with pytest.raises(ValueError):
        conv2d_forward(np.zeros((1, 3, 8, 8)), np.zeros((4, 2, 3, 3)),
                       np.zeros(4), 1)


def test_conv_gradcheck():
    for seed in range(3):
        assert check_conv(seed, kernel=3, stride=1) <= 1e-4
        assert check_conv(seed, kernel=5, stride=2) <= 1e-4
        assert check_conv(seed, kernel=7, stride=2) <= 1e-4
        assert check_conv(seed, kernel=1, stride=1) <= 1e-4


def test_deconv_partition_of_unity_interior():
    x = np.full((1, 1, 6, 6), 0.8)
    w = np.full((1, 1, 4, 4), 0.25)
    y, _ = deconv2d_forward(x, w, np.zeros(1))
    assert y.shape == (1, 1, 12, 12)
    # interior pixels receive 4 overlapping taps of 0.25 each; the
    # outermost ring receives fewer (transposed-conv boundary attenuation)
    assert np.allclose(y[0, 0, 1:-1, 1:-1], 0.8, atol=1e-12)
    assert y[0, 0, 0, 0] < 0.8


def test_deconv_adjoint_identity():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 3, 5, 4))
    w = rng.standard_normal((3, 2, 4, 4))
    y = rng.standard_normal((1, 2, 10, 8))
    dec, _ = deconv2d_forward(x, w, np.zeros(2))
    conv_y = naive_strided_conv(y, w, 2, 1)
    lhs = float(np.sum(dec * y))
    rhs = float(np.sum(x * conv_y))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-6)


def test_deconv_gradcheck():
    for seed in range(3):
        assert check_deconv(seed) <= 1e-4


def test_leaky_relu_slope():
    y, _ = leaky_relu_forward(np.array([-1.0]))
    assert y[0] == -0.1
    y2, cache = leaky_relu_forward(np.array([-2.0, 3.0]))
    assert np.array_equal(y2, [-0.2, 3.0])
    g = leaky_relu_backward(np.array([1.0, 1.0]), cache)
    assert np.array_equal(g, [0.1, 1.0])


def test_tanh_zero_and_gradchecks():
    y, _ = tanh_forward(np.zeros(3))
    assert np.all(y == 0.0)
    rng = np.random.default_rng(3)
    x = rng.uniform(0.2, 1.5, 20) * np.where(rng.random(20) < 0.5, -1, 1)
    h = 1e-6
    for fwd, bwd in ((tanh_forward, tanh_backward),
                     (leaky_relu_forward, leaky_relu_backward)):
        y, cache = fwd(x)
        g = bwd(np.ones_like(x), cache)
        fd = (fwd(x + h)[0] - fwd(x - h)[0]) / (2 * h)
        assert np.abs(g - fd).max() <= 1e-6


def test_concat_and_split():
    a = np.random.default_rng(4).standard_normal((1, 2, 3, 3))
    b = np.random.default_rng(5).standard_normal((1, 3, 3, 3))
    cat = concat_channels([a, b])
    assert cat.shape[1] == 5
    sa, sb = split_channels(cat, [2, 3])
    assert np.array_equal(sa, a) and np.array_equal(sb, b)
    with pytest.raises(ValueError):
        concat_channels([a, np.zeros((1, 2, 4, 3))])


def test_reference_table_concat_arithmetic():
    # 192 + 192 + 2 = 386 must equal flow5's declared input channels
    net = build_flow_net(ModelConfig(base_channels=24))
    assert net.by_name["flow5"].in_c == 386
    assert net.by_name["flow4"].in_c == 290
    assert net.by_name["flow3"].in_c == 146
    assert net.by_name["flow2"].in_c == 74
    assert net.by_name["rnnw1"].in_c == 38


def test_adam_zero_grad_no_motion():
    p = np.array([1.0, -2.0, 3.0], dtype=np.float32)
    state = AdamState.like(p)
    adam_step(p, np.zeros_like(p), state, weight_decay=0.0)
    assert np.array_equal(p, [1.0, -2.0, 3.0])


def test_adam_first_step_is_signed_lr():
    p = np.zeros(4)
    g = np.array([0.5, -0.25, 3.0, -1.0])
    state = AdamState.like(p)
    adam_step(p, g, state, lr=1e-3, weight_decay=0.0)
    assert np.allclose(p, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_defaults_match_reported_hyperparameters():
    import inspect
    sig = inspect.signature(adam_step)
    assert sig.parameters["lr"].default == 1e-3
    assert sig.parameters["beta1"].default == 0.9
    assert sig.parameters["beta2"].default == 0.999
    assert sig.parameters["weight_decay"].default == 1e-6


def test_adam_weight_decay_pulls_to_zero():
    p = np.full(3, 10.0)
    state = AdamState.like(p)
    adam_step(p, np.zeros(3), state, lr=1e-3, weight_decay=1e-2)
    assert np.all(p < 10.0)


def test_xavier_bound_variance_determinism():
    shape = (96, 128, 3, 3)
    fan_in = 128 * 9
    fan_out = 96 * 9
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    t = xavier_init(shape, np.random.default_rng(0), dtype=np.float64)
    assert np.abs(t).max() <= bound
    assert t.size > 1e5
    var = t.var()
    target = 2.0 / (fan_in + fan_out)
    assert abs(var - target) <= 0.1 * target
    t2 = xavier_init(shape, np.random.default_rng(0), dtype=np.float64)
    assert np.array_equal(t, t2)
