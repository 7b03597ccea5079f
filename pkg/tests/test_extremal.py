import numpy as np
import pytest

from lockin.extremal import (
    f_range,
    f_star,
    kkt_direction,
    oracle_extremize,
    solve_kkt,
    tangent_extremum,
)
from lockin.gauge import singularity_clearance, v_cc
from lockin.model import eval_f, eval_rhs_full


def random_instances(model, gauge, n, seed, V_max=None):
    rng = np.random.default_rng(seed)
    V_max = V_max or 0.5 * singularity_clearance(gauge, model)
    th = rng.uniform(-np.pi, np.pi, n)
    w = rng.uniform(-3, 3, n)
    V = np.exp(rng.uniform(np.log(1e-3), np.log(V_max), n))
    return th, w, V


def check_invariants(pt, th, w, V, gauge, model, tol=1e-10):
    x = pt.x_star
    assert abs(x @ gauge.P @ x - V) <= tol * max(V, 1)
    r = gauge.P @ x - pt.lam * kkt_direction(th, w, x, model)
    assert np.linalg.norm(r) <= tol * max(1, np.linalg.norm(gauge.P @ x))
    assert (pt.lam < 0) if pt.sense == "min" else (pt.lam > 0)
    assert pt.f_value == pytest.approx(float(eval_f(th, w, x, model)), rel=1e-12)


def test_small_V_limit(model_I, gauge_I):
    from lockin.model import eval_f_partials
    f0 = float(eval_f(0.3, 0.5, np.zeros(4), model_I))
    _, _, grad = eval_f_partials(0.3, 0.5, np.zeros(4), model_I)
    spread = np.sqrt(grad @ gauge_I.P_inv @ grad)
    for V in (1e-6, 1e-9, 1e-12):
        for sense, sgn in (("min", -1), ("max", 1)):
            pt = solve_kkt(0.3, 0.5, V, sense, gauge_I, model_I)
            assert np.linalg.norm(pt.x_star) <= np.sqrt(V / np.min(np.linalg.eigvalsh(gauge_I.P))) * (1 + 1e-9)
            # first-order expansion: f0 +- sqrt(V grad^T P^-1 grad)
            assert pt.f_value - f0 == pytest.approx(sgn * spread * np.sqrt(V), rel=1e-2)


def test_invariants_on_random_instances(model_I, gauge_I):
    th, w, V = random_instances(model_I, gauge_I, 100, 0)
    for k in range(100):
        for sense in ("min", "max"):
            check_invariants(solve_kkt(th[k], w[k], V[k], sense, gauge_I, model_I), th[k], w[k], V[k],
                             gauge_I, model_I)


def test_kkt_matches_closed_form(model_I, gauge_I):
    th, w, V = random_instances(model_I, gauge_I, 50, 1)
    lo, hi = f_range(th, w, V, gauge_I, model_I)
    for k in range(50):
        assert solve_kkt(th[k], w[k], V[k], "min", gauge_I, model_I).f_value == pytest.approx(lo[k], rel=1e-9)
        assert solve_kkt(th[k], w[k], V[k], "max", gauge_I, model_I).f_value == pytest.approx(hi[k], rel=1e-9)


def test_tangent_point_on_boundary(model_I, gauge_I):
    th, w, V = random_instances(model_I, gauge_I, 20, 2)
    x, c = tangent_extremum(th, w, V, "max", gauge_I, model_I)
    np.testing.assert_allclose(v_cc(x, gauge_I), V, rtol=1e-8)
    np.testing.assert_allclose(eval_f(th, w, x, model_I), c, rtol=1e-8)


def test_oracle_examples(model_I, gauge_I):
    r = oracle_extremize(0.2, -0.1, 0.0, "min", gauge_I, model_I, n=64)
    assert np.array_equal(r.x_star, np.zeros(4))
    assert r.f_value == float(eval_f(0.2, -0.1, np.zeros(4), model_I))
    th, w, V = random_instances(model_I, gauge_I, 10, 3)
    for k in range(10):
        lo = oracle_extremize(th[k], w[k], V[k], "min", gauge_I, model_I, n=2000)
        hi = oracle_extremize(th[k], w[k], V[k], "max", gauge_I, model_I, n=2000)
        assert lo.f_value <= hi.f_value
        # interior samples never beat the boundary optimum
        assert lo.interior_best >= lo.f_value - 1e-9 * (1 + abs(lo.f_value))
        assert hi.interior_best <= hi.f_value + 1e-9 * (1 + abs(hi.f_value))


def test_kkt_oracle_agreement_small(model_I, gauge_I):
    th, w, V = random_instances(model_I, gauge_I, 20, 4)
    for k in range(20):
        sense = "min" if k % 2 else "max"
        kkt = solve_kkt(th[k], w[k], V[k], sense, gauge_I, model_I).f_value
        orc = oracle_extremize(th[k], w[k], V[k], sense, gauge_I, model_I, n=20000).f_value
        assert abs(kkt - orc) <= max(1e-4 * abs(orc), 1e-8)


def test_f_star_branches(model_I, gauge_I):
    assert f_star(0.3, 0.2, 5.0, gauge_I, model_I) == solve_kkt(0.3, 0.2, 5.0, "min", gauge_I, model_I).f_value
    assert f_star(0.3, -0.2, 5.0, gauge_I, model_I) == solve_kkt(0.3, -0.2, 5.0, "max", gauge_I, model_I).f_value
    assert f_star(0.3, 0.0, 5.0, gauge_I, model_I) == solve_kkt(0.3, 0.0, 5.0, "min", gauge_I, model_I).f_value


def test_direction_at_zero_domega_is_collinear(model_I, gauge_I):
    kp, ki = model_I.k_p, model_I.k_i
    for th in (-2.0, -0.5, 0.4, 1.7):
        for V in (0.1, 100.0, 2000.0):
            fs = f_star(th, 0.0, V, gauge_I, model_I)
            d = np.array([-kp * fs, -ki * fs])
            assert abs(d[0] * ki - d[1] * kp) <= 1e-15 * (1 + np.linalg.norm(d))


def test_dominance(model_I, gauge_I):
    rng = np.random.default_rng(5)
    th, w, V = random_instances(model_I, gauge_I, 1000, 5)
    w[::7] = 0.0
    u = rng.normal(size=(1000, 4))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    x = gauge_I.boundary_points(u, 1.0) * np.sqrt(V * rng.uniform(0, 1, 1000) ** 0.5)[:, None]
    fx = eval_f(th, w, x, model_I)
    for k in range(1000):
        fs = f_star(th[k], w[k], V[k], gauge_I, model_I)
        if w[k] >= 0:
            assert fs <= fx[k] + 1e-9
        else:
            assert fs >= fx[k] - 1e-9


def test_crossing_property(model_I, gauge_I):
    """The comparison field bounds the true domega rate from the correct side."""
    th, w, V = random_instances(model_I, gauge_I, 200, 6)
    rng = np.random.default_rng(6)
    u = rng.normal(size=(200, 4))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    x = gauge_I.boundary_points(u, 1.0) * np.sqrt(V)[:, None]
    true = eval_rhs_full(th, w, x, model_I)[:, 1]
    for k in range(200):
        comp = -model_I.k_i * f_star(th[k], w[k], V[k], gauge_I, model_I)
        if w[k] >= 0:
            assert true[k] <= comp + 1e-12
        else:
            assert true[k] >= comp - 1e-12
