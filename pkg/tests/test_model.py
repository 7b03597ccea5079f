import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lockin.exceptions import ModelInvalid, NotHurwitz, SingularDenominator
from lockin.model import (
    InverterParams,
    SinusoidalModel,
    check_oscillatory,
    default_inverter_model,
    eval_f,
    eval_f_partials,
    eval_rhs_full,
    gradient_candidate,
    oscillation_report,
    pll_jacobian,
)


def random_points(model, n, seed):
    rng = np.random.default_rng(seed)
    th_s, w_s, x_s = model.typical_scales()
    th = rng.uniform(-np.pi, np.pi, n)
    w = rng.uniform(-1, 1, n) * w_s
    x = rng.uniform(-1, 1, (n, 4)) * x_s
    return th, w, x


def direct_f(th, w, x, model):
    """Loop-based re-evaluation of the quotient."""
    out = np.empty(len(th))
    for k in range(len(th)):
        h = model.h(w[k])
        num = model.g(th[k], w[k]) - sum(h[j] * x[k, j] for j in range(4))
        den = model.mu - sum(model.nu[j] * x[k, j] for j in range(4))
        out[k] = num / den
    return out


def test_f_vanishes_at_origin(model_I):
    assert eval_f(0.0, 0.0, np.zeros(4), model_I) == 0.0
    assert model_I.g(0.0, 0.0) == 0.0


def test_f_at_zero_disturbance(model_I):
    th, w, _ = random_points(model_I, 50, 1)
    np.testing.assert_allclose(eval_f(th, w, np.zeros((50, 4)), model_I), model_I.g(th, w) / model_I.mu,
                               rtol=1e-15)


def test_f_matches_direct_quotient(model_I):
    th, w, x = random_points(model_I, 200, 2)
    np.testing.assert_allclose(eval_f(th, w, x, model_I), direct_f(th, w, x, model_I), rtol=1e-8)


def test_gradient_at_zero_disturbance(model_I):
    th, w, _ = random_points(model_I, 20, 3)
    _, _, grad = eval_f_partials(th, w, np.zeros((20, 4)), model_I)
    b = model_I.mu * model_I.h(w) - model_I.g(th, w)[:, None] * model_I.nu
    np.testing.assert_allclose(grad, model_I.grad_sign * b / model_I.mu**2, rtol=1e-12)


def test_gradient_sign_is_resolved_by_the_gate(model_I):
    # the hand-derived sign; the printed formula has the opposite one
    assert model_I.grad_sign == -1.0


def test_gradient_matches_finite_differences(model_I):
    th, w, x = random_points(model_I, 1000, 4)
    _, _, grad = eval_f_partials(th, w, x, model_I)
    fd = np.empty_like(x)
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1e-6 * (1 + np.abs(x[:, j])).max()
        fd[:, j] = (direct_f(th, w, x + e, model_I) - direct_f(th, w, x - e, model_I)) / (2 * e[j])
    err = np.linalg.norm(grad - fd, axis=1) / np.linalg.norm(fd, axis=1)
    assert err.max() <= 1e-6


def test_wrong_sign_fails_finite_differences(model_I):
    th, w, x = random_points(model_I, 100, 5)
    _, _, grad = eval_f_partials(th, w, x, model_I)
    wrong = gradient_candidate(th, w, x, model_I, -model_I.grad_sign)
    assert np.max(np.linalg.norm(wrong - grad, axis=1) / np.linalg.norm(grad, axis=1)) > 1e-3


def test_scalar_partials_match_finite_differences(model_I):
    th, w, x = random_points(model_I, 100, 6)
    f_t, f_w, _ = eval_f_partials(th, w, x, model_I)
    d = 1e-4
    np.testing.assert_allclose(f_t, (eval_f(th + d, w, x, model_I) - eval_f(th - d, w, x, model_I)) / (2 * d),
                               rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(f_w, (eval_f(th, w + d, x, model_I) - eval_f(th, w - d, x, model_I)) / (2 * d),
                               rtol=1e-6, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10))
def test_H_is_skew(model_I, w):
    H = model_I.H(w)
    assert np.array_equal(H.T, -H)
    assert np.array_equal(model_I.H_prime(w).T, -model_I.H_prime(w))


def test_rhs_at_equilibrium_is_zero(model_I, model_II):
    for m in (model_I, model_II):
        assert np.array_equal(eval_rhs_full(0.0, 0.0, np.zeros(4), m), np.zeros(6))


def test_rhs_composition(model_I):
    th, w, x = random_points(model_I, 30, 7)
    rhs = eval_rhs_full(th, w, x, model_I)
    f = eval_f(th, w, x, model_I)
    np.testing.assert_allclose(rhs[:, 0], -model_I.k_p * f + w, rtol=1e-14)
    np.testing.assert_allclose(rhs[:, 1], -model_I.k_i * f, rtol=1e-14)
    rhs0 = eval_rhs_full(th, w, np.zeros((30, 4)), model_I)
    np.testing.assert_allclose(rhs0[:, 0], -model_I.k_p * model_I.g(th, w) / model_I.mu + w, rtol=1e-14)
    assert np.all(rhs0[:, 2:] == 0)


def test_cc_block_is_linear(model_I):
    th, w, x = random_points(model_I, 2, 8)
    cc = lambda x: eval_rhs_full(0.1, 0.0, x, model_I)[..., 2:]
    np.testing.assert_allclose(cc(x[0] + x[1]) - cc(x[0]) - cc(x[1]) + cc(np.zeros(4)), 0, atol=1e-12)


def test_singular_denominator_is_raised(model_I):
    x = np.zeros(4)
    x[0] = model_I.mu / model_I.nu[0]
    with pytest.raises(SingularDenominator):
        eval_f(0.0, 0.0, x, model_I)


def test_oscillation_report_examples():
    rep = oscillation_report([[-1, 1], [-1, 0]])
    assert rep.passed
    np.testing.assert_allclose(sorted(rep.eigenvalues, key=lambda z: z.imag),
                               [(-1 - 1j * np.sqrt(3)) / 2, (-1 + 1j * np.sqrt(3)) / 2])
    rep = oscillation_report([[-3, 1], [-2, 0]])
    assert not rep.passed
    np.testing.assert_allclose(sorted(rep.eigenvalues.real), [-2, -1])


def test_table_presets():
    p = InverterParams.preset("version-I")
    assert (p.k_p, p.k_i, p.kappa_p, p.kappa_i) == (3e-4, 1e-4, 1e-2, 1.0)
    assert (p.L_f, p.R_f, p.L_g, p.R_g, p.v_g_norm) == (1e-3, 4e-4, 2e-3, 6e-4, 325.0)
    assert p.omega_g == 100 * np.pi and tuple(p.i_dq_ref) == (10.0, 0.0)
    q = InverterParams.preset("version-II")
    assert (q.k_p, q.k_i) == (3e-3, 1e-2)
    with pytest.raises(ModelInvalid):
        InverterParams.preset("version-III")


def test_presets_pass_assumptions(model_I, model_II):
    assert check_oscillatory(model_I).passed
    assert check_oscillatory(model_II).passed
    for m in (model_I, model_II):
        assert np.max(np.linalg.eigvals(m.A).real) < 0
        assert m.mu != 0


def test_inflated_gains_are_not_oscillatory():
    m = default_inverter_model(InverterParams(k_p=3e-4 * 1000, k_i=1e-4 * 1000))
    rep = check_oscillatory(m)
    assert not rep.passed
    assert np.all(rep.eigenvalues.imag == 0)


@settings(max_examples=30, deadline=None)
@given(
    st.floats(1e-5, 1e-2), st.floats(1e-5, 1e-1), st.floats(1e-3, 0.1), st.floats(0.1, 10),
    st.floats(5.0, 20.0), st.floats(-5.0, 5.0),
)
def test_any_params_keep_equilibrium(k_p, k_i, kappa_p, kappa_i, i_d, i_q):
    m = default_inverter_model(InverterParams(k_p=k_p, k_i=k_i, kappa_p=kappa_p, kappa_i=kappa_i,
                                              i_dq_ref=(i_d, i_q)))
    assert abs(m.g(0.0, 0.0)) <= 1e-12
    assert m.mu != 0


def test_invalid_models():
    A = -np.eye(4)
    with pytest.raises(NotHurwitz):
        SinusoidalModel(np.eye(4), 1.0, 1.0)
    with pytest.raises(ModelInvalid):
        SinusoidalModel(A, 1.0, 1.0, mu=0.0)
    with pytest.raises(ModelInvalid):
        SinusoidalModel(A, -1.0, 1.0)
    with pytest.raises(ModelInvalid):
        default_inverter_model(InverterParams(L_f=-1.0))


def test_plugin_model_jacobian():
    m = SinusoidalModel(-np.eye(4), k_p=1.0, k_i=1.0)
    np.testing.assert_allclose(pll_jacobian(m), [[-1, 1], [-1, 0]])
    assert m.grad_sign in (-1.0, 1.0)
