import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from lockin.exceptions import NotHurwitz
from lockin.gauge import Gauge, build_gauge, singularity_clearance, v_cc
from lockin.model import SinusoidalModel


def random_hurwitz(rng, n=4):
    M = rng.normal(size=(n, n))
    shift = np.max(np.linalg.eigvals(M).real) + rng.uniform(0.05, 2.0)
    return M - shift * np.eye(n)


def assert_valid(gauge, A):
    P = gauge.P
    assert np.array_equal(P, P.T)
    assert np.min(np.linalg.eigvalsh(P)) > 0
    M = A.T @ P + P @ A + gauge.gamma * P
    assert np.max(np.linalg.eigvalsh(0.5 * (M + M.T))) < 0


def test_identity_case():
    g = build_gauge(-np.eye(4), 0.5)
    assert g.gamma == 1.0
    np.testing.assert_allclose(g.P, np.eye(4), atol=1e-14)


def test_diagonal_case():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    g = build_gauge(-np.diag(a), 0.5)
    assert g.gamma == 1.0
    np.testing.assert_allclose(g.P, np.diag(1.0 / (2 * a - 1)), rtol=1e-13, atol=1e-15)


def test_default_model_gauge(model_I, gauge_I):
    assert_valid(gauge_I, model_I.A)
    assert gauge_I.gamma == pytest.approx(2 * 0.5 * abs(np.max(np.linalg.eigvals(model_I.A).real)))


def test_random_hurwitz_matrices():
    rng = np.random.default_rng(0)
    for _ in range(100):
        A = random_hurwitz(rng)
        assert_valid(build_gauge(A, rng.uniform(0.05, 0.95)), A)


def test_rejects_unstable_and_bad_margin():
    with pytest.raises(NotHurwitz):
        build_gauge(np.diag([-1.0, -1.0, -1.0, 0.0]))
    with pytest.raises(ValueError):
        build_gauge(-np.eye(4), 1.0)


def test_v_cc_examples():
    g = Gauge(P=np.eye(4), gamma=1.0)
    assert v_cc(np.zeros(4), g) == 0.0
    assert v_cc([1.0, 0, 0, 0], g) == 1.0


def test_v_cc_matches_double_sum(gauge_I, rng):
    X = rng.normal(size=(50, 4))
    ref = [sum(x[i] * gauge_I.P[i, j] * x[j] for i in range(4) for j in range(4)) for x in X]
    np.testing.assert_allclose(v_cc(X, gauge_I), ref, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3).filter(lambda v: v == 0 or abs(v) > 1e-100), min_size=4, max_size=4))
def test_v_cc_positive(gauge_I, x):
    val = v_cc(x, gauge_I)
    assert val >= 0
    assert (val == 0) == (not np.any(x))


def test_boundary_points_lie_on_ellipsoid(gauge_I, rng):
    u = rng.normal(size=(20, 4))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    np.testing.assert_allclose(v_cc(gauge_I.boundary_points(u, 7.0), gauge_I), 7.0, rtol=1e-12)


def test_clearance_examples():
    g = Gauge(P=np.eye(4), gamma=1.0)
    m = SinusoidalModel(-np.eye(4), 1.0, 1.0, mu=1.0, nu=np.zeros(4))
    assert singularity_clearance(g, m) == np.inf
    m = SinusoidalModel(-np.eye(4), 1.0, 1.0, mu=1.0, nu=[1.0, 0, 0, 0])
    assert singularity_clearance(g, m, eps_margin=0.0) == pytest.approx(1.0)


def test_clearance_is_tight(model_I, gauge_I, rng):
    V = singularity_clearance(gauge_I, model_I, 0.1)
    u = rng.normal(size=(20000, 4))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    x = gauge_I.boundary_points(u, V)
    assert np.max(np.abs(x @ model_I.nu)) <= 0.9 * abs(model_I.mu) * (1 + 1e-12)
    x_best = np.sqrt(V) * gauge_I.P_inv @ model_I.nu / np.sqrt(model_I.nu @ gauge_I.P_inv @ model_I.nu)
    assert abs(x_best @ model_I.nu) == pytest.approx(0.9 * abs(model_I.mu))


def test_decay_along_cc_trajectories(model_I, gauge_I, rng):
    A, g = model_I.A, gauge_I
    scale = np.abs(np.linalg.eigvals(A).real).max()
    for dt in (1e-3 / scale, 0.1 / scale, 0.05 / g.gamma, 1.0 / g.gamma):
        E = expm(A * dt)
        x = rng.normal(size=(200, 4))
        ratio = v_cc(x @ E.T, g) / v_cc(x, g)
        assert np.all(ratio <= np.exp(-g.gamma * dt) + 1e-6)
