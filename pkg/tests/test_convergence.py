import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedmmg import convergence as cv


def test_objective_spectrum_and_optimum():
    obj = cv.make_objective(10, 1.0, 10.0, 0)
    eig = np.linalg.eigvalsh(obj.A)
    assert eig[0] == pytest.approx(1.0, abs=1e-12) and eig[-1] == pytest.approx(10.0, abs=1e-12)
    assert np.allclose(obj.grad(obj.w_star), 0, atol=1e-12)
    w = np.ones(10)
    assert obj.gap(w) == pytest.approx(obj.value(w) - obj.f_star, rel=1e-10)


def test_one_dimensional_rate_is_exact():
    # F = w^2/2 with L = 2: gap shrinks by exactly (1 - 1/2)^2 per step
    obj = cv.QuadraticObjective(np.array([[1.0]]), np.zeros(1), 1.0, 2.0)
    ws = cv.gradient_descent(obj, [4.0], 3)
    assert ws[:, 0].tolist() == [4.0, 2.0, 1.0, 0.5]


def test_bad_constants():
    with pytest.raises(ValueError):
        cv.make_objective(5, 2.0, 1.0, 0)
    with pytest.raises(ValueError):
        cv.make_objective(5, 0.0, 1.0, 0)


def test_suite_passes_on_default_settings():
    rows = cv.run_suite(range(20))
    assert all(r.passed for r in rows)
    assert max(r.max_ratio for r in rows) <= 1 + 1e-9
    for r in rows:
        assert r.iterations_to_eps is None or r.iterations_to_eps <= r.iteration_bound


@given(st.integers(2, 8), st.floats(0.1, 5), st.floats(1.0, 50), st.integers(0, 10**6))
@settings(max_examples=60, deadline=None)
def test_linear_rate_holds(dim, mu, kappa, seed):
    obj = cv.make_objective(dim, mu, mu * kappa, seed)
    w0 = np.random.default_rng(seed).standard_normal(dim) * 5
    rep = cv.check_linear_rate(obj, w0, 100)
    assert rep.passed, rep.max_ratio


def test_too_large_step_is_caught():
    obj = cv.make_objective(4, 1.0, 10.0, 1)
    ws = cv.gradient_descent(obj, np.ones(4) * 3, 30, eta=0.25)
    gaps = [obj.gap(w) for w in ws]
    assert gaps[-1] > gaps[0]  # step above 2/L diverges


@given(st.integers(1, 5), st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_single_step_fedavg_equals_centralized(n, seed):
    objs = [cv.make_objective(6, 1.0, 8.0, [seed, j]) for j in range(n)]
    p = np.random.default_rng(seed).dirichlet(np.ones(n))
    w0 = np.random.default_rng([seed, 9]).standard_normal(6)
    assert cv.check_federated_consistency(objs, p, w0).passed


def test_multi_step_drift_is_nonzero_for_heterogeneous_clients():
    objs = [cv.make_objective(6, 1.0, 8.0, j) for j in range(3)]
    drift = cv.multi_step_drift(objs, [1 / 3] * 3, local_steps=5, rounds=4)
    assert drift.shape == (4,) and drift.max() > 1e-6
    one = cv.multi_step_drift(objs, [1 / 3] * 3, local_steps=1, rounds=4)
    assert one.max() < 1e-10


def test_iteration_bound():
    obj = cv.make_objective(3, 1.0, 4.0, 2)
    rep = cv.check_linear_rate(obj, np.full(3, 10.0), 200, eps=1e-8)
    assert rep.iteration_bound == math.ceil(4.0 * math.log(rep.gaps[0] / 1e-8))
    assert rep.iterations_to_eps <= rep.iteration_bound


def test_write_suite(tmp_path):
    rows = cv.run_suite([0, 1], dim=3, k_max=10)
    cv.write_suite(rows, tmp_path / "c.csv", "note")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "# note" and lines[1].startswith("seed,") and len(lines) == 4
