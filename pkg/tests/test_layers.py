import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganforge import tensor as T
from ganforge.errors import ConfigError, ShapeError, StatisticsError
from ganforge.layers import (
    BatchNormState,
    LayerSpec,
    Sequential,
    batchnorm_forward,
    build_layer,
    init_parameters,
)
from ganforge.tensor import Tape, Tensor

from gradsuite import worst_errors
from oracles import gradcheck


def make_state(c, gamma=1.0, beta=0.0, dtype=np.float32):
    return BatchNormState(
        Tensor(np.full(c, gamma), dtype=dtype, requires_grad=True),
        Tensor(np.full(c, beta), dtype=dtype, requires_grad=True),
        np.zeros(c, dtype=dtype),
        np.ones(c, dtype=dtype),
    )


def test_train_output_is_standardized(rng):
    x = rng.normal(3.0, 5.0, (16, 4, 6, 6)).astype(np.float32)
    y = batchnorm_forward(Tensor(x), make_state(4), "train").data
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-3)


def test_affine_scale_and_shift(rng):
    x = rng.normal(-1.0, 2.0, (8, 3, 4, 4)).astype(np.float32)
    y = batchnorm_forward(Tensor(x), make_state(3, gamma=2.0, beta=3.0), "train").data
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 3.0, atol=1e-5)
    np.testing.assert_allclose(y.std(axis=(0, 2, 3)), 2.0, atol=1e-3)


def test_eval_matches_loop_oracle(rng):
    c = 3
    x = rng.standard_normal((2, c, 3, 3))
    state = make_state(c, dtype=np.float64)
    state.gamma.data[:] = [0.5, 1.5, -1.0]
    state.beta.data[:] = [0.1, 0.0, -0.2]
    state.running_mean[:] = [0.3, -0.4, 1.0]
    state.running_var[:] = [0.5, 2.0, 1.3]
    y = batchnorm_forward(Tensor(x, dtype=np.float64), state, "eval").data
    for n in range(2):
        for ch in range(c):
            for i in range(3):
                for j in range(3):
                    want = (x[n, ch, i, j] - state.running_mean[ch]) / np.sqrt(state.running_var[ch] + 1e-5)
                    want = want * state.gamma.data[ch] + state.beta.data[ch]
                    assert y[n, ch, i, j] == pytest.approx(want, rel=1e-12)


def test_running_statistics_update(rng):
    x = rng.normal(2.0, 3.0, (5, 2, 3, 3))
    state = make_state(2, dtype=np.float64)
    batchnorm_forward(Tensor(x, dtype=np.float64), state, "train")
    m = x.mean(axis=(0, 2, 3))
    v = x.var(axis=(0, 2, 3), ddof=1)
    np.testing.assert_allclose(state.running_mean, 0.1 * m, rtol=1e-12)
    np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * v, rtol=1e-12)


def test_eval_leaves_running_statistics(rng):
    state = make_state(2)
    before = (state.running_mean.copy(), state.running_var.copy())
    batchnorm_forward(Tensor(rng.standard_normal((4, 2, 2, 2))), state, "eval")
    np.testing.assert_array_equal(state.running_mean, before[0])
    np.testing.assert_array_equal(state.running_var, before[1])


def test_single_value_per_channel_is_statistics_error():
    with pytest.raises(StatisticsError):
        batchnorm_forward(Tensor(np.ones((1, 3, 1, 1))), make_state(3), "train")


def test_batchnorm_channel_mismatch():
    with pytest.raises(ShapeError):
        batchnorm_forward(Tensor(np.ones((2, 4, 2, 2))), make_state(3), "train")


def test_leaky_relu_examples():
    y = T.leaky_relu(Tensor([-1.0, 0.0, 2.0]), 0.2).data
    np.testing.assert_allclose(y, [-0.2, 0.0, 2.0], rtol=1e-7)


def test_leaky_relu_gradient_at_minus_one():
    x = Tensor([-1.0], requires_grad=True)
    with Tape() as tape:
        loss = T.sum(T.leaky_relu(x, 0.2))
    (g,) = tape.gradient(loss, [x])
    assert g[0] == pytest.approx(0.2, rel=1e-6)
    (err,) = gradcheck(lambda t: T.sum(T.leaky_relu(t, 0.2)), [[-1.0]], np.float64, 1e-6)
    assert err < 1e-8


@pytest.mark.parametrize("slope", [0.0, 1.0, -0.1, 1.5])
def test_leaky_slope_validation(slope):
    with pytest.raises(ConfigError):
        LayerSpec("leaky_relu", slope=slope)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30))
def test_relu_idempotent_and_tanh_bounded(values):
    x = Tensor(values, dtype=np.float64)
    r = T.relu(x).data
    np.testing.assert_array_equal(T.relu(Tensor(r, dtype=np.float64)).data, r)
    assert np.all(np.abs(T.tanh(x).data) <= 1.0)


def test_init_deterministic_and_seed_sensitive():
    spec = LayerSpec("conv", 16, 32, 4, 2, 1)
    a = init_parameters(spec, 5)["weight"]
    b = init_parameters(spec, 5)["weight"]
    c = init_parameters(spec, 6)["weight"]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_init_weight_statistics():
    w = init_parameters(LayerSpec("conv_transpose", 64, 128, 4, 2, 1), 0)["weight"]
    assert w.shape == (64, 128, 4, 4)
    # mean of n draws from N(0, 0.02) has standard error 0.02 / sqrt(n)
    assert abs(w.mean()) < 4 * 0.02 / np.sqrt(w.size)
    assert abs(w.std() - 0.02) < 0.001


def test_batchnorm_init():
    p = init_parameters(LayerSpec("batchnorm", out_channels=512), 1)
    np.testing.assert_array_equal(p["beta"], 0.0)
    assert abs(p["gamma"].mean() - 1.0) < 4 * 0.02 / np.sqrt(512)


def test_bias_is_zero_and_optional():
    assert "bias" not in init_parameters(LayerSpec("conv", 1, 2, 3), 0)
    b = init_parameters(LayerSpec("conv", 1, 2, 3, bias=True), 0)["bias"]
    np.testing.assert_array_equal(b, 0.0)


def test_invalid_specs_raise():
    for kwargs in [
        dict(kind="conv", in_channels=0, out_channels=2, kernel=3),
        dict(kind="conv", in_channels=1, out_channels=2, kernel=3, stride=0),
        dict(kind="conv", in_channels=1, out_channels=2, kernel=3, padding=-1),
        dict(kind="batchnorm", out_channels=0),
        dict(kind="batchnorm", out_channels=2, momentum=1.0),
        dict(kind="softmax"),
    ]:
        with pytest.raises(ConfigError):
            LayerSpec(**kwargs)


def test_sequential_state_round_trip(rng):
    specs = [LayerSpec("conv", 1, 4, 3, padding=1), LayerSpec("batchnorm", out_channels=4), LayerSpec("relu")]
    net = Sequential([build_layer(s, i) for i, s in enumerate(specs)])
    net(Tensor(rng.standard_normal((4, 1, 5, 5))))
    other = Sequential([build_layer(s, 100 + i) for i, s in enumerate(specs)])
    other.load_state_dict({k: v.copy() for k, v in net.state_dict().items()})
    for k, v in net.state_dict().items():
        np.testing.assert_array_equal(other.state_dict()[k], v)
    assert list(net.named_parameters()) == ["0.weight", "1.gamma", "1.beta"]
    assert list(net.named_buffers()) == ["1.running_mean", "1.running_var"]
    with pytest.raises(KeyError):
        other.load_state_dict({"0.weight": net.state_dict()["0.weight"]})


@pytest.mark.parametrize("name", ["batchnorm_train", "batchnorm_eval", "leaky_relu", "relu", "tanh", "sigmoid_head"])
def test_layer_gradients(name):
    assert max(worst_errors(name, 5, np.float32, 1e-3, seed=21)) < 1e-2
    assert max(worst_errors(name, 5, np.float64, 1e-6, seed=22)) < 1e-6
