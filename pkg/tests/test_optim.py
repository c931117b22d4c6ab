import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganforge.errors import CoverageError, NumericError, ShapeError
from ganforge.optim import Adam, AdamState, adam_step
from ganforge.tensor import Tensor, precision

from oracles import adam_reference


def scalar_param(value, dtype=np.float64):
    return {"theta": Tensor([value], dtype=dtype, requires_grad=True)}


def test_zero_gradient_leaves_parameters():
    params = {"a": Tensor(np.arange(6.0).reshape(2, 3)), "b": Tensor([1.0])}
    before = {k: p.data.copy() for k, p in params.items()}
    state = adam_step(params, {k: np.zeros(p.shape, p.dtype) for k, p in params.items()}, AdamState())
    assert state.step_count == 1
    for k, p in params.items():
        np.testing.assert_array_equal(p.data, before[k])


def test_first_step_hand_value():
    params = scalar_param(1.0)
    adam_step(params, {"theta": np.array([10.0])}, AdamState(lr=0.0002, eps=1e-8))
    assert params["theta"].data[0] == pytest.approx(1 - 0.0002 * 10 / (10 + 1e-8), abs=1e-12)
    assert params["theta"].data[0] == pytest.approx(0.9998, abs=1e-9)


def test_minimizes_quadratic():
    params = scalar_param(5.0)
    state = AdamState(lr=0.01)
    for _ in range(2000):
        adam_step(params, {"theta": 2 * params["theta"].data}, state)
    assert abs(params["theta"].data[0]) < 1e-2
    assert state.step_count == 2000


@pytest.mark.parametrize("g", [1e-3, 1.0, 1e3, -1e-3, -1e3])
def test_first_update_is_sign_like(g):
    with precision(np.float64):
        params = scalar_param(0.0)
        adam_step(params, {"theta": np.array([g])}, AdamState(lr=0.0002))
    expected = -0.0002 * g / (abs(g) + 1e-8)
    assert params["theta"].data[0] == pytest.approx(expected, abs=1e-9)
    # magnitude independent of |g| up to the eps term
    assert abs(params["theta"].data[0]) == pytest.approx(0.0002, rel=1e-4)


def test_matches_reference_recurrence(rng):
    grads = rng.standard_normal(50) * 3
    params = scalar_param(0.7)
    state = AdamState(lr=0.003, beta1=0.5, beta2=0.999, eps=1e-8)
    for g in grads:
        adam_step(params, {"theta": np.array([g])}, state)
    want = adam_reference(0.7, grads, 0.003, 0.5, 0.999, 1e-8)
    assert params["theta"].data[0] == pytest.approx(want, rel=1e-12)


def test_missing_gradient_is_coverage_error_without_mutation():
    params = {"a": Tensor([1.0]), "b": Tensor([2.0])}
    state = AdamState()
    with pytest.raises(CoverageError, match="b"):
        adam_step(params, {"a": np.array([1.0], dtype=np.float32)}, state)
    assert state.step_count == 0 and not state.first_moment
    assert params["a"].data[0] == 1.0


def test_nan_gradient_names_parameter_without_mutation():
    params = {"conv.weight": Tensor([1.0, 2.0]), "other": Tensor([3.0])}
    state = AdamState()
    grads = {"conv.weight": np.array([0.5, np.nan], dtype=np.float32), "other": np.ones(1, np.float32)}
    with pytest.raises(NumericError, match="conv.weight"):
        adam_step(params, grads, state)
    assert state.step_count == 0
    np.testing.assert_array_equal(params["conv.weight"].data, [1.0, 2.0])


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"a": Tensor([1.0, 2.0])}, {"a": np.ones(3, np.float32)}, AdamState())


@pytest.mark.parametrize("kwargs", [dict(lr=-1.0), dict(beta1=1.0), dict(beta2=-0.1), dict(eps=0.0)])
def test_invalid_hyperparameters(kwargs):
    with pytest.raises(ValueError):
        AdamState(**kwargs)


def test_defaults():
    s = AdamState()
    assert (s.lr, s.beta1, s.beta2, s.eps) == (0.0002, 0.5, 0.999, 1e-8)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10), st.integers(1, 5))
def test_moment_invariants_and_determinism(values, steps):
    def run():
        params = {"w": Tensor(np.zeros(len(values)), dtype=np.float64)}
        state = AdamState()
        for _ in range(steps):
            adam_step(params, {"w": np.array(values)}, state)
        return params["w"].data, state

    a, sa = run()
    b, sb = run()
    np.testing.assert_array_equal(a, b)
    assert np.all(sa.second_moment["w"] >= 0)
    assert sa.first_moment["w"].shape == (len(values),)
    assert sa.step_count == steps


def test_state_tensor_round_trip(rng):
    params = {"w": Tensor(rng.standard_normal((2, 2)))}
    opt = Adam(params, lr=0.001)
    opt.step({"w": rng.standard_normal((2, 2)).astype(np.float32)})
    saved = {k: v.copy() for k, v in opt.state_tensors("opt").items()}
    assert set(saved) == {"opt.m.w", "opt.v.w"}
    other = Adam({"w": Tensor(params["w"].data.copy())})
    other.load_state_tensors("opt", saved, opt.state.hyperparameters())
    g = rng.standard_normal((2, 2)).astype(np.float32)
    opt.step(g_map := {"w": g})
    other.step(g_map)
    np.testing.assert_array_equal(opt.params["w"].data, other.params["w"].data)
    assert other.lr == 0.001 and other.state.step_count == 2
