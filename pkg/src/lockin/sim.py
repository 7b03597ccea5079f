"""Closed-loop simulation and Monte Carlo validation of domain estimates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .gauge import v_cc
from .model import eval_rhs_full, pll_jacobian

log = logging.getLogger(__name__)


@dataclass
class SimConfig:
    """Integration and convergence settings.

    Attributes
    ----------
    horizon : float or None
        Simulated time limit; ``None`` means 50 slow time constants.
    ball_vcc_rel : float
        Convergence requires ``V_cc <= ball_vcc_rel * V_bar``.
    ball_pll : float
        ... and ``||(dtheta, domega)|| <= ball_pll``.
    dwell_periods : float
        ... sustained for this many PLL periods.
    """

    horizon: float | None = None
    ball_vcc_rel: float = 1e-6
    ball_pll: float = 1e-3
    dwell_periods: float = 5.0
    rtol: float = 1e-8
    atol: float = 1e-10
    samples_per_period: int = 100


@dataclass
class TrajectoryOutcome:
    converged: bool
    slipped: bool
    t_final: float
    min_dtheta: float
    max_dtheta: float
    t: np.ndarray | None = None
    y: np.ndarray | None = None

    @property
    def inconclusive(self):
        return not (self.converged or self.slipped)


@dataclass
class ValidationReport:
    n_total: int = 0
    n_converged: int = 0
    n_slipped: int = 0
    n_inconclusive: int = 0
    worst_margin: float = float("nan")
    slipped_states: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))

    def as_dict(self):
        return {
            "n_total": self.n_total,
            "n_converged": self.n_converged,
            "n_slipped": self.n_slipped,
            "n_inconclusive": self.n_inconclusive,
            "worst_margin": self.worst_margin,
        }


def time_scales(model, gauge):
    """``(pll_period, slow_time_constant)`` of the linearized closed loop."""
    eig = np.linalg.eigvals(pll_jacobian(model))
    wd = np.max(np.abs(eig.imag))
    period = 2 * np.pi / wd if wd > 0 else 1.0 / np.min(np.abs(eig.real))
    slow = max(2.0 / gauge.gamma, 1.0 / np.min(np.abs(eig.real)))
    return float(period), float(slow)


def default_horizon(model, gauge):
    return 50.0 * time_scales(model, gauge)[1]


def simulate_batch(states0, model, gauge, V_bar, cfg=None, dense=False):
    """Simulate many initial states of the six-dimensional loop.

    All active trajectories are stacked into one ODE and advanced one PLL
    period at a time with an embedded Runge-Kutta 5(4) pair. A terminal
    event stops the integration whenever some ``|dtheta|`` reaches ``pi``;
    that trajectory is marked slipped and the rest resume. Decided
    trajectories leave the batch between chunks.

    Raises
    ------
    SingularDenominator
        A trajectory reached ``mu - nu^T x = 0``.
    """
    cfg = cfg or SimConfig()
    states0 = np.atleast_2d(np.asarray(states0, dtype=float))
    n = len(states0)
    period, _ = time_scales(model, gauge)
    horizon = cfg.horizon if cfg.horizon is not None else default_horizon(model, gauge)
    dwell = cfg.dwell_periods * period
    vcc_thr = cfg.ball_vcc_rel * V_bar
    dt_sample = period / cfg.samples_per_period

    converged = np.zeros(n, dtype=bool)
    slipped = np.zeros(n, dtype=bool)
    t_final = np.full(n, horizon)
    lo = states0[:, 0].copy()
    hi = states0[:, 0].copy()
    since = np.full(n, np.nan)
    store_t = [[0.0] for _ in range(n)] if dense else None
    store_y = [[states0[i]] for i in range(n)] if dense else None

    at_rest = np.all(states0 == 0, axis=1)
    converged[at_rest] = True
    t_final[at_rest] = 0.0
    start_slip = np.abs(states0[:, 0]) >= np.pi
    slipped[start_slip] = True
    t_final[start_slip] = 0.0

    active = np.flatnonzero(~(converged | slipped))
    y = states0[active].copy()
    t = 0.0

    def rhs(_, Y):
        return eval_rhs_full(Y[0::6], Y[1::6], Y.reshape(-1, 6)[:, 2:], model).ravel()

    def slip(_, Y):
        return np.pi - np.max(np.abs(Y[0::6]))

    slip.terminal = True
    slip.direction = -1

    def check_ball(ts, Y, idx):
        for k, tk in enumerate(ts):
            yk = Y[:, k, :]
            inside = (v_cc(yk[:, 2:], gauge) <= vcc_thr) & (np.hypot(yk[:, 0], yk[:, 1]) <= cfg.ball_pll)
            sub = since[idx]
            sub = np.where(inside, np.where(np.isnan(sub), tk, sub), np.nan)
            since[idx] = sub
            done = inside & (tk - sub >= dwell) & ~converged[idx]
            converged[idx[done]] = True
            t_final[idx[done]] = tk

    while active.size and t < horizon:
        t_end = min(t + period, horizon)
        n_eval = max(int(np.ceil((t_end - t) / dt_sample)), 1)
        t_eval = np.linspace(t, t_end, n_eval + 1)[1:]
        sol = solve_ivp(rhs, (t, t_end), y.ravel(), method="RK45", t_eval=t_eval, events=slip,
                        rtol=cfg.rtol, atol=cfg.atol)
        if sol.status == -1:
            raise RuntimeError(sol.message)
        Y = sol.y.reshape(len(active), 6, -1).transpose(0, 2, 1)
        if Y.shape[1]:
            lo[active] = np.minimum(lo[active], Y[:, :, 0].min(axis=1))
            hi[active] = np.maximum(hi[active], Y[:, :, 0].max(axis=1))
            check_ball(sol.t, Y, active)
            if dense:
                for j, i in enumerate(active):
                    store_t[i].extend(sol.t)
                    store_y[i].extend(Y[j])
        if sol.status == 1:
            tc = float(sol.t_events[0][0])
            yc = sol.y_events[0][0].reshape(-1, 6)
            j = int(np.argmax(np.abs(yc[:, 0])))
            i = active[j]
            slipped[i] = True
            converged[i] = False
            t_final[i] = tc
            lo[i] = min(lo[i], yc[j, 0])
            hi[i] = max(hi[i], yc[j, 0])
            if dense:
                store_t[i].append(tc)
                store_y[i].append(yc[j])
            t = tc
            y = yc
        else:
            t = t_end
            y = Y[:, -1, :]
        keep = ~(converged[active] | slipped[active])
        active = active[keep]
        y = y[keep]

    out = []
    for i in range(n):
        tr_t = np.array(store_t[i]) if dense else None
        tr_y = np.array(store_y[i]) if dense else None
        out.append(TrajectoryOutcome(bool(converged[i]), bool(slipped[i]), float(t_final[i]),
                                     float(lo[i]), float(hi[i]), tr_t, tr_y))
    return out


def simulate(state0, model, gauge, V_bar, cfg=None, dense=False):
    """Simulate one trajectory; see :func:`simulate_batch`."""
    return simulate_batch(np.asarray(state0, dtype=float)[None], model, gauge, V_bar, cfg, dense)[0]


# -- sampling ---------------------------------------------------------------

def sample_pll_in_level(level, fam, rng, n):
    """Uniform samples inside ``Lambda(level)`` by rejection against ``V_pll``."""
    level = np.broadcast_to(np.asarray(level, dtype=float), (n,))
    if np.any(np.isnan(level)):
        raise ValueError("sampling level is NaN")
    out = np.zeros((n, 2))
    lv = fam.levels
    boxes = []
    for c in fam.cycles[1:]:
        boxes.append((c.dtheta.min(), c.dtheta.max(), c.domega.min(), c.domega.max()))
    boxes = np.array(boxes)
    k = np.clip(np.searchsorted(lv, level, side="left"), 1, len(lv) - 1)
    todo = np.flatnonzero(level > 0)
    while todo.size:
        b = boxes[k[todo] - 1] * 1.001
        th = rng.uniform(b[:, 0], b[:, 1])
        w = rng.uniform(b[:, 2], b[:, 3])
        ok = fam.query(th, w) <= level[todo]
        out[todo[ok]] = np.column_stack([th[ok], w[ok]])
        todo = todo[~ok]
    return out


def sample_inside(est, fam, gauge, n, rng, inset=0.01, vcc_floor=1e-6):
    """Initial states strictly inside ``V_pll <= Phi(V_cc)`` with a relative inset.

    ``V_cc`` is log-uniform on ``[vcc_floor, 1 - inset] * V_bar_bar``; ``x``
    lies on that ellipsoid in a uniformly random direction; the PLL state is
    uniform in ``Lambda((1 - inset) Phi(V_cc))``.
    """
    top = (1 - inset) * est.V_bar_bar
    vcc = np.exp(rng.uniform(np.log(vcc_floor * est.V_bar_bar), np.log(top), n))
    u = rng.standard_normal((n, 4))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    x = np.sqrt(vcc)[:, None] * np.linalg.solve(gauge.chol.T, u.T).T
    level = (1 - inset) * est.phi_at(vcc)
    pll = sample_pll_in_level(level, fam, rng, n)
    return np.column_stack([pll, x])


def sample_trivial_square(V_bar, fam, gauge, n, rng, inset=0.01):
    """Initial states with ``V_pll, V_cc <= (1 - inset) V_bar``."""
    vcc = rng.uniform(0, (1 - inset) * V_bar, n)
    u = rng.standard_normal((n, 4))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    x = np.sqrt(vcc)[:, None] * np.linalg.solve(gauge.chol.T, u.T).T
    pll = sample_pll_in_level(np.full(n, (1 - inset) * V_bar), fam, rng, n)
    return np.column_stack([pll, x])


def sample_control(est, fam, gauge, n, rng, spread=(1.02, 1.3)):
    """Control group just outside ``Lambda(V_bar)`` with ``V_cc`` near ``V_bar_bar``."""
    outer = fam.cycles[-1]
    j = rng.integers(0, len(outer.t), n)
    s = rng.uniform(*spread, n)
    pll = np.column_stack([outer.dtheta[j], outer.domega[j]]) * s[:, None]
    u = rng.standard_normal((n, 4))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    x = np.sqrt(est.V_bar_bar) * np.linalg.solve(gauge.chol.T, u.T).T
    return np.column_stack([pll, x])


def monte_carlo_validate(est, fam, gauge, model, N, seed=0, inset=0.01, cfg=None, batch=250):
    """Simulate ``N`` initial states sampled inside the estimate.

    ``worst_margin`` is the smallest distance ``pi - max |dtheta(t)|`` any
    trajectory kept from the slip lines.
    """
    rep = ValidationReport()
    if N <= 0:
        return rep
    rng = np.random.default_rng(seed)
    states = sample_inside(est, fam, gauge, N, rng, inset)
    return validate_states(states, model, gauge, est.V_bar, cfg, batch)


def validate_states(states, model, gauge, V_bar, cfg=None, batch=250):
    outcomes = []
    for k in range(0, len(states), batch):
        outcomes.extend(simulate_batch(states[k:k + batch], model, gauge, V_bar, cfg))
    slipped = np.array([o.slipped for o in outcomes], dtype=bool)
    return ValidationReport(
        n_total=len(outcomes),
        n_converged=sum(o.converged for o in outcomes),
        n_slipped=int(slipped.sum()),
        n_inconclusive=sum(o.inconclusive for o in outcomes),
        worst_margin=float(min(np.pi - max(abs(o.min_dtheta), abs(o.max_dtheta)) for o in outcomes)),
        slipped_states=states[slipped],
    )


# -- audit ------------------------------------------------------------------

@dataclass
class AuditReport:
    n_samples: int
    n_violations: int
    max_excess: float
    first_violation: float | None


def lyapunov_audit(t, y, fam, gauge, rel_tol=1e-3):
    """Check that ``W = max(V_pll, V_cc)`` never leaves a family sublevel it entered.

    Once ``W <= V_k`` for a family level ``V_k``, the trajectory has
    entered ``Lambda(V_k) x {V_cc <= V_k}`` which is forward invariant; a
    violation is a later sample with ``W > (1 + rel_tol) V_k``. Levels are
    compared against the cycles themselves, so interpolation between
    cycles does not enter.
    """
    t = np.asarray(t, dtype=float)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if len(t) == 0:
        return AuditReport(0, 0, 0.0, None)
    W = np.maximum(fam.query(y[:, 0], y[:, 1]), v_cc(y[:, 2:], gauge))
    lv = fam.levels
    run = np.minimum.accumulate(W)
    k = np.searchsorted(lv, run * (1 - 1e-12), side="left")
    cap = np.where(k < len(lv), lv[np.minimum(k, len(lv) - 1)], np.inf)
    cap = np.minimum.accumulate(cap)
    bound = np.where(cap == 0, 0.0, cap * (1 + rel_tol))
    excess = np.where(np.isfinite(cap), (W - bound) / np.maximum(cap, 1e-300), 0.0)
    bad = W > bound
    return AuditReport(len(t), int(bad.sum()), float(max(excess.max(), 0.0)),
                       float(t[np.argmax(bad)]) if bad.any() else None)
