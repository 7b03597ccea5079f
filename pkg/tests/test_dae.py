import numpy as np
import pytest
from scipy.integrate import solve_ivp

from lockin.dae import DaeSolver, DaeState, Event, SemiExplicitDae, integrate, step
from lockin.exceptions import IndexViolation
from lockin.family import (
    MODE_MAX,
    MODE_MIN,
    _dedupe,
    comparison_dae,
    consistent_kkt,
    find_limit_cycle,
    return_map,
)
from lockin.model import eval_rhs_full


def no_alg(t, y, z, mode):
    return np.zeros((len(t), 0))


def decay():
    return SemiExplicitDae(1, 0, lambda t, y, z, m: -y, no_alg)


def test_exponential_decay():
    tr = integrate(decay(), DaeState(0.0, np.array([1.0]), np.zeros(0)), 1.0, rtol=1e-10, atol=1e-12)
    assert tr.final.t == 1.0
    assert abs(tr.final.diff[0] - np.exp(-1)) <= 1e-6


def test_single_step_is_accurate():
    state, h_next = step(decay(), DaeState(0.0, np.array([1.0]), np.zeros(0)), 0.1)
    assert state.diff[0] == pytest.approx(np.exp(-state.t), rel=1e-9)
    assert h_next > 0


def test_algebraic_variable_tracks_differential():
    dae = SemiExplicitDae(1, 1, lambda t, y, z, m: -y, lambda t, y, z, m: z - y)
    tr = integrate(dae, DaeState(0.0, np.array([1.0]), np.array([0.3])), 2.0)
    assert tr.alg[0, 0] == pytest.approx(1.0)
    np.testing.assert_allclose(tr.alg[:, 0], tr.diff[:, 0], rtol=1e-10)
    assert tr.final.diff[0] == pytest.approx(np.exp(-2.0), rel=1e-6)


def test_nonlinear_algebraic_constraint():
    # z^3 + z = y has a unique real root; the solver must stay on it
    dae = SemiExplicitDae(1, 1, lambda t, y, z, m: np.cos(t)[:, None] + 0 * y,
                          lambda t, y, z, m: z**3 + z - y)
    tr = integrate(dae, DaeState(0.0, np.array([0.0]), np.array([0.0])), 5.0)
    np.testing.assert_allclose(tr.diff[:, 0], np.sin(tr.t), atol=1e-7)
    np.testing.assert_allclose(tr.alg[:, 0] ** 3 + tr.alg[:, 0], tr.diff[:, 0], atol=1e-10)


def test_harmonic_oscillator_period():
    dae = SemiExplicitDae(2, 0, lambda t, y, z, m: np.stack([y[:, 1], -y[:, 0]], axis=1), no_alg,
                          [Event("up", lambda t, y, z, m: y[1], direction=1)])
    tr = integrate(dae, DaeState(0.0, np.array([1.0, 0.0]), np.zeros(0)), 10 * 2 * np.pi + 1.0,
                   rtol=1e-10, atol=1e-12)
    times = np.array([e.t for e in tr.events])
    assert len(times) == 10
    np.testing.assert_allclose(np.diff(times), 2 * np.pi, atol=1e-5)


def test_event_location():
    dae = SemiExplicitDae(1, 0, lambda t, y, z, m: -np.ones_like(y), no_alg,
                          [Event("zero", lambda t, y, z, m: y[0], direction=-1, terminal=True)])
    tr = integrate(dae, DaeState(0.0, np.array([1.0]), np.zeros(0)), 5.0)
    assert tr.stopped
    assert len(tr.events) == 1
    assert abs(tr.events[0].t - 1.0) <= 1e-9


def test_landing_event_switches_mode():
    # |y|' = -1 realized by a mode switch at y = 0
    dae = SemiExplicitDae(1, 0, lambda t, y, z, m: -m * np.ones_like(y), no_alg)
    from lockin.dae import Action
    dae.events = [Event("flip", lambda t, y, z, m: m * y[0], direction=-1, land=True,
                        action=lambda t, y, z, m: Action(mode=-m))]
    tr = integrate(dae, DaeState(0.0, np.array([0.5]), np.zeros(0), mode=1), 2.0, max_step=0.3)
    assert len(tr.events) >= 1
    assert abs(tr.events[0].t - 0.5) <= 1e-9
    assert tr.events[0].diff[0] == pytest.approx(0.0, abs=1e-9)


def test_singular_algebraic_jacobian():
    dae = SemiExplicitDae(1, 1, lambda t, y, z, m: -y, lambda t, y, z, m: 0 * z + y - 1.0)
    with pytest.raises(IndexViolation):
        DaeSolver(dae).consistent(0.0, np.array([0.5]), np.array([0.0]), None)


def test_comparison_dae_small_V_matches_unforced_pll(model_I, gauge_I):
    V = 1e-10
    y0 = np.array([0.02, 0.0])
    dae = comparison_dae(V, gauge_I, model_I)
    state = DaeState(0.0, y0, consistent_kkt(y0[0], y0[1], V, gauge_I, model_I), MODE_MAX)
    tr = DaeSolver(dae).integrate(state, 150.0, max_step=0.25)
    t, y, _, _ = _dedupe(tr.t, tr.diff, tr.alg, tr.modes)

    def rhs(t, s):
        return eval_rhs_full(s[0], s[1], np.zeros(4), model_I)[:2]

    ref = solve_ivp(rhs, (0, 150.0), y0, t_eval=t, rtol=1e-11, atol=1e-13, method="DOP853")
    err = np.max(np.abs(y - ref.y.T), axis=0)
    assert np.all(err <= 1e-4 * np.abs(ref.y).max(axis=1))
    # the focus is attracting: the orbit spirals inward
    first = np.abs(y[t < 40, 0]).max()
    last = np.abs(y[t > 110, 0]).max()
    assert last < 0.9 * first


@pytest.fixture(scope="module")
def cycle_V1(model_I, gauge_I):
    return find_limit_cycle(1.0, gauge_I, model_I)


def test_switch_events_twice_per_revolution(model_I, gauge_I, cycle_V1):
    dae = comparison_dae(1.0, gauge_I, model_I)
    y0 = np.array([cycle_V1.section, 0.0])
    state = DaeState(0.0, y0, consistent_kkt(y0[0], 0.0, 1.0, gauge_I, model_I), MODE_MAX)
    n_rev = 3
    tr = DaeSolver(dae, rtol=1e-9, atol=1e-12).integrate(state, n_rev * cycle_V1.period - 0.25 * cycle_V1.period,
                                                          max_step=cycle_V1.period / 128)
    switches = [e for e in tr.events if e.name == "switch"]
    assert len(switches) == 2 * n_rev - 1
    modes = [e.mode for e in switches]
    assert all(a != b for a, b in zip(modes, modes[1:]))


def test_algebraic_residual_after_every_step(model_I, gauge_I, cycle_V1):
    _, tr = return_map(1.0, cycle_V1.section, gauge_I, model_I)
    dae = comparison_dae(1.0, gauge_I, model_I)
    for mode in (MODE_MIN, MODE_MAX):
        sel = np.array(tr.modes) == mode
        res = dae.residual(tr.t[sel], tr.diff[sel], tr.alg[sel], mode)
        bound = 1e-10 * (1 + np.linalg.norm(tr.alg[sel], axis=1))
        assert np.all(np.linalg.norm(res, axis=1) <= bound)


def test_self_convergence(model_I, gauge_I, cycle_V1):
    from lockin.family import FamilyConfig
    s0 = cycle_V1.section * 1.1
    coarse_tol = 1e-7
    coarse, tr = return_map(1.0, s0, gauge_I, model_I, FamilyConfig(rtol=coarse_tol, atol=1e-10))
    fine, _ = return_map(1.0, s0, gauge_I, model_I, FamilyConfig(rtol=coarse_tol / 2, atol=0.5e-10))
    n_steps = len(tr.t) // 2
    estimate = n_steps * coarse_tol * abs(coarse)
    assert abs(coarse - fine) < estimate
