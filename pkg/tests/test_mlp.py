import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedmmg.mlp import (
    AdamState, AgentSpec, IntegrityError, MlpSpec, NonFiniteError, ParamVector, adam_step, backward, flatten,
    forward, init_params, load_checkpoint, save_checkpoint, unflatten, unpack,
)


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))))


def test_zero_params_give_zero_output():
    spec = MlpSpec((3, 5, 2))
    assert np.array_equal(forward(spec, np.zeros(spec.n_params), [1.0, -2.0, 3.0]), [0.0, 0.0])


def test_identity_single_layer():
    spec = MlpSpec((3, 3))
    params = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    x = np.array([0.3, -1.5, 7.0])
    assert np.array_equal(forward(spec, params, x), x)


def test_hand_computed_2_2_1_net():
    # W1 rows are inputs, columns hidden units
    w1 = [[0.5, -0.3], [0.8, 0.1]]
    b1 = [0.1, -0.2]
    w2 = [[1.5], [-2.0]]
    b2 = [0.3]
    params = np.array([0.5, -0.3, 0.8, 0.1, 0.1, -0.2, 1.5, -2.0, 0.3])
    x = [0.7, -1.2]
    h0 = math.tanh(x[0] * w1[0][0] + x[1] * w1[1][0] + b1[0])
    h1 = math.tanh(x[0] * w1[0][1] + x[1] * w1[1][1] + b1[1])
    y = h0 * w2[0][0] + h1 * w2[1][0] + b2[0]
    assert forward(MlpSpec((2, 2, 1)), params, x)[0] == pytest.approx(y, abs=1e-12)


def test_dimension_mismatch():
    spec = MlpSpec((3, 4, 1))
    with pytest.raises(ValueError):
        forward(spec, np.zeros(spec.n_params), [1.0, 2.0])
    with pytest.raises(ValueError):
        forward(spec, np.zeros(spec.n_params + 1), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        MlpSpec((3,))


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    spec = MlpSpec((4, 8, 8, 2))
    params = init_params(spec, rng) + 0.1 * rng.standard_normal(spec.n_params)
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 2))
    f = lambda p: float(np.sum(forward(spec, p, x) * w))
    g, gx = backward(spec, params, x, w)
    assert max_rel_err(g, fd_grad(f, params)) < 1e-4
    fx = lambda xx: float(np.sum(forward(spec, params, xx.reshape(3, 4)) * w))
    assert max_rel_err(gx.ravel(), fd_grad(fx, x.ravel())) < 1e-4


def test_zero_output_grad_and_linearity():
    rng = np.random.default_rng(0)
    spec = MlpSpec((3, 6, 2))
    p = init_params(spec, rng)
    x = rng.standard_normal(3)
    assert np.array_equal(backward(spec, p, x, np.zeros(2))[0], np.zeros(spec.n_params))
    g_sum = backward(spec, p, x, np.ones(2))[0]
    g_parts = backward(spec, p, x, [1.0, 0.0])[0] + backward(spec, p, x, [0.0, 1.0])[0]
    assert np.allclose(g_sum, g_parts, atol=1e-14)


def test_glorot_init_limits():
    spec = MlpSpec((6, 64, 2))
    p = init_params(spec, np.random.default_rng(1))
    (w1, b1), (w2, b2) = unpack(spec, p)
    assert np.abs(w1).max() <= math.sqrt(6 / 70) and np.abs(w2).max() <= math.sqrt(6 / 66)
    assert not b1.any() and not b2.any()


def test_adam_zero_gradient():
    st_ = AdamState(lr=0.1, m=np.array([1.0, -2.0]), v=np.array([4.0, 1.0]), step=3)
    p = np.array([0.5, 0.25])
    # nonzero moments still move params; with fresh moments a zero grad does nothing
    fresh, s1 = adam_step(AdamState.zeros(2, 0.1), p, np.zeros(2))
    assert np.array_equal(fresh, p) and s1.step == 1
    _, s2 = adam_step(st_, p, np.zeros(2))
    assert np.allclose(s2.m, 0.9 * st_.m) and np.allclose(s2.v, 0.999 * st_.v) and s2.step == 4


def test_adam_first_step_is_lr_times_sign():
    g = np.array([0.3, -5.0, 1e-3, 3000.0])
    new, _ = adam_step(AdamState.zeros(4, 0.01), np.zeros(4), g)
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    assert np.allclose(new, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12, atol=0)
    a, _ = adam_step(AdamState.zeros(2, 0.01), np.zeros(2), np.array([0.2, 200.0]))
    assert abs(a[0]) == pytest.approx(abs(a[1]), rel=1e-6)


def test_adam_is_pure_and_rejects_nan():
    s = AdamState.zeros(2, 0.1)
    p = np.array([1.0, 2.0])
    adam_step(s, p, np.array([1.0, 1.0]))
    assert s.step == 0 and not s.m.any() and np.array_equal(p, [1.0, 2.0])
    with pytest.raises(NonFiniteError):
        adam_step(s, p, np.array([np.nan, 1.0]))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 16), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_flatten_round_trip(n_obs, n_act, hidden, seed):
    spec = AgentSpec.build(n_obs, n_act, (hidden,))
    rng = np.random.default_rng(seed)
    a, c = rng.standard_normal(spec.n_actor), rng.standard_normal(spec.critic.n_params)
    vec = flatten(a, c, spec)
    a2, c2 = unflatten(vec, spec)
    assert np.array_equal(a, a2) and np.array_equal(c, c2)
    assert vec.values.dtype == np.dtype("<f8") and not vec.values.flags.writeable


def test_integrity_errors():
    spec = AgentSpec.build(6, 2)
    other = AgentSpec.build(6, 2, (32, 32))
    assert spec.spec_hash != other.spec_hash
    vec = ParamVector(np.zeros(spec.n_params), spec.spec_hash)
    with pytest.raises(IntegrityError):
        unflatten(vec, other)
    with pytest.raises(IntegrityError):
        unflatten(ParamVector(np.zeros(spec.n_params - 1), spec.spec_hash), spec)
    with pytest.raises(IntegrityError):
        flatten(np.zeros(3), np.zeros(3), spec)
    with pytest.raises(NonFiniteError):
        ParamVector(np.array([np.inf]), spec.spec_hash)


def test_checkpoint_round_trip(tmp_path):
    spec = AgentSpec.build(6, 2)
    vec = ParamVector(np.random.default_rng(2).standard_normal(spec.n_params), spec.spec_hash)
    save_checkpoint(tmp_path / "a.ckpt", vec, spec, step=1500)
    back, spec2, step = load_checkpoint(tmp_path / "a.ckpt")
    assert spec2 == spec and step == 1500
    assert back.values.tobytes() == vec.values.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(IntegrityError):
        load_checkpoint(tmp_path / "x.ckpt")
