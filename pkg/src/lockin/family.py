"""Limit cycles of the V-comparison system and the PLL Lyapunov function.

The comparison system replaces the forcing ``f`` by its worst case over
the ellipsoid ``V_cc(x) <= V``: the minimum for ``domega >= 0`` and the
maximum below. Its clockwise limit cycle bounds a forward-invariant region
of the PLL; the nested family of these cycles is the level-set
representation of ``V_pll``.

Both extremizers are carried as algebraic variables of an index-1 DAE::

    state z = (x_min, lam_min, x_max, lam_max)
    0 = x^T P x - V,   0 = P x - lam (s b + H x)

and differentiating the whole system in ``V`` gives the sensitivity DAE
whose solution ``(dtheta', domega')`` fixes the gradient of ``V_pll`` via
``grad . velocity = 0``, ``grad . prime = 1``.

The comparison field jumps across ``domega = 0``. At every switch the
primes are shifted along the velocity so that ``domega' = 0``: this is a
free choice of representative (the velocity component of the prime is
invisible to the gradient) which removes the saltation jump and the
secular drift caused by the period depending on ``V``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import extremal
from .dae import Action, DaeSolver, DaeState, Event, SemiExplicitDae
from .exceptions import (
    EmptyFamily,
    GradientDegenerate,
    LockInError,
    NoCycle,
    SensitivityDiverged,
    StepFailure,
)
from .gauge import singularity_clearance
from .model import eval_f, eval_f_partials, pll_jacobian

log = logging.getLogger(__name__)

MODE_MIN = 1   # domega >= 0: f* = min f
MODE_MAX = -1  # domega < 0:  f* = max f
_ON_CURVE_RTOL = 1e-12


# -- the comparison DAE -------------------------------------------------------

def _branch_residual(th, w, x, lam, V, gauge, model):
    Px = x @ gauge.P
    r = extremal.kkt_direction(th, w, x, model)
    return np.concatenate([(np.sum(x * Px, axis=-1) - V)[:, None], Px - lam[:, None] * r], axis=1)


def _fstar(th, w, z, mode, model):
    x = z[:, 0:4] if mode == MODE_MIN else z[:, 5:9]
    return eval_f(th, w, x, model), x


def comparison_dae(V, gauge, model, band=np.pi, on_switch=None):
    """The 12-dimensional comparison DAE at level ``V``."""
    kp, ki = model.k_p, model.k_i

    def rhs(t, y, z, mode):
        f, _ = _fstar(y[:, 0], y[:, 1], z, mode, model)
        return np.stack([-kp * f + y[:, 1], -ki * f], axis=1)

    def residual(t, y, z, mode):
        th, w = y[:, 0], y[:, 1]
        return np.concatenate(
            [
                _branch_residual(th, w, z[:, 0:4], z[:, 4], V, gauge, model),
                _branch_residual(th, w, z[:, 5:9], z[:, 9], V, gauge, model),
            ],
            axis=1,
        )

    events = [
        Event("switch", lambda t, y, z, m: m * y[1], direction=-1, land=True,
              action=on_switch or (lambda t, y, z, m: Action(mode=-m))),
        Event("band", lambda t, y, z, m: band - abs(y[0]), direction=-1, terminal=True),
    ]
    return SemiExplicitDae(2, 10, rhs, residual, events)


def sensitivity_dae(V, gauge, model, band=np.pi, on_switch=None):
    """Comparison DAE augmented with its derivative in ``V`` (24 variables).

    Differential: ``(dtheta, domega, dtheta', domega')``; algebraic: the 10
    KKT unknowns followed by their 10 derivatives.
    """
    kp, ki = model.k_p, model.k_i
    P = gauge.P
    sgn = model.grad_sign

    def rhs(t, y, z, mode):
        th, w, thp, wp = y.T
        base = z[:, :10]
        prime = z[:, 10:]
        if mode == MODE_MIN:
            x, xp = base[:, 0:4], prime[:, 0:4]
        else:
            x, xp = base[:, 5:9], prime[:, 5:9]
        f = eval_f(th, w, x, model)
        f_t, f_w, gx = eval_f_partials(th, w, x, model)
        fp = f_t * thp + f_w * wp + np.sum(gx * xp, axis=1)
        return np.stack([-kp * f + w, -ki * f, -kp * fp + wp, -ki * fp], axis=1)

    def residual(t, y, z, mode):
        th, w, thp, wp = y.T
        b_t, b_w = model.b_partials(th, w)
        H = model.H(w)
        Hp = model.H_prime(w)
        if H.ndim == 2:
            H = np.broadcast_to(H, (len(th), 4, 4))
            Hp = np.broadcast_to(Hp, (len(th), 4, 4))
        rb = sgn * (b_t * thp[:, None] + b_w * wp[:, None])
        parts = []
        for off in (0, 5):
            x, lam = z[:, off:off + 4], z[:, off + 4]
            parts.append(_branch_residual(th, w, x, lam, V, gauge, model))
        for off in (0, 5):
            x, lam = z[:, off:off + 4], z[:, off + 4]
            xp, lamp = z[:, 10 + off:14 + off], z[:, 14 + off]
            r = extremal.kkt_direction(th, w, x, model)
            dr = rb + np.einsum("nij,nj->ni", H, xp) + wp[:, None] * np.einsum("nij,nj->ni", Hp, x)
            c = 2.0 * np.sum(x * (xp @ P), axis=1) - 1.0
            s = xp @ P - lamp[:, None] * r - lam[:, None] * dr
            parts.append(np.concatenate([c[:, None], s], axis=1))
        return np.concatenate(parts, axis=1)

    events = [
        Event("switch", lambda t, y, z, m: m * y[1], direction=-1, land=True,
              action=on_switch or (lambda t, y, z, m: Action(mode=-m))),
        Event("band", lambda t, y, z, m: band - abs(y[0]), direction=-1, terminal=True),
    ]
    return SemiExplicitDae(4, 20, rhs, residual, events)


def consistent_kkt(th, w, V, gauge, model):
    """Algebraic state ``(x_min, lam_min, x_max, lam_max)`` at one point."""
    if V <= 0:
        return np.zeros(10)
    out = []
    for sense in ("min", "max"):
        x, lam, _ = extremal.solve_kkt_batch(th, w, V, sense, gauge, model)
        out.extend([x[0], [lam[0]]])
    return np.concatenate(out)


def comparison_velocity(th, w, z, mode, model):
    f, _ = _fstar(np.atleast_1d(th), np.atleast_1d(w), np.atleast_2d(z), mode, model)
    return np.stack([-model.k_p * f + np.atleast_1d(w), -model.k_i * f], axis=1)


# -- data types -----------------------------------------------------------------

@dataclass
class LimitCycle:
    """One sampled revolution of the comparison system's limit cycle.

    Samples run clockwise from the section ``{domega = 0, dtheta > 0}``
    back to it; the first and last samples coincide.
    """

    V: float
    t: np.ndarray
    dtheta: np.ndarray
    domega: np.ndarray
    modes: np.ndarray
    alg: np.ndarray
    period: float
    section: float
    primes: np.ndarray | None = None
    grad: np.ndarray | None = None
    grad_filled: np.ndarray | None = None
    section_prime: float | None = None

    @property
    def points(self):
        return np.column_stack([self.dtheta, self.domega])

    def velocity(self, model):
        v = np.empty((len(self.t), 2))
        for mode in (MODE_MIN, MODE_MAX):
            sel = self.modes == mode
            if np.any(sel):
                v[sel] = comparison_velocity(self.dtheta[sel], self.domega[sel], self.alg[sel, :10], mode, model)
        return v

    def signed_area(self):
        x, y = self.dtheta, self.domega
        return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))

    def max_abs_dtheta(self):
        return float(np.max(np.abs(self.dtheta)))

    @classmethod
    def origin(cls):
        z = np.zeros(1)
        return cls(V=0.0, t=z, dtheta=z, domega=z, modes=np.array([MODE_MIN]), alg=np.zeros((1, 10)),
                   period=np.nan, section=0.0, primes=np.zeros((1, 2)), grad=np.zeros((1, 2)),
                   grad_filled=np.zeros(1, dtype=bool), section_prime=0.0)


class _Radial:
    """Polar lookup of a star-shaped closed curve around the origin."""

    def __init__(self, pts):
        pts = np.asarray(pts, dtype=float)
        if np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        ang = np.arctan2(pts[:, 1], pts[:, 0])
        turn = np.diff(np.unwrap(np.append(ang, ang[0])))
        if not (np.all(turn < 0) or np.all(turn > 0)):
            raise LockInError("cycle is not star-shaped about the origin")
        order = np.argsort(ang)
        self.ang = ang[order]
        self.pts = pts[order]

    def radius(self, alpha):
        """Distance from the origin to the curve along direction ``alpha``."""
        alpha = np.asarray(alpha, dtype=float)
        n = len(self.ang)
        j = np.searchsorted(self.ang, alpha) % n
        i = (j - 1) % n
        p, q = self.pts[i], self.pts[j]
        u = np.stack([np.cos(alpha), np.sin(alpha)], axis=-1)
        d = q - p
        num = p[..., 0] * d[..., 1] - p[..., 1] * d[..., 0]
        den = u[..., 0] * d[..., 1] - u[..., 1] * d[..., 0]
        return num / den


@dataclass
class CycleFamily:
    """Nested limit cycles ordered by level, starting with the origin at ``V = 0``."""

    cycles: list
    V_bar: float
    _radial: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._radial = [None] + [_Radial(c.points) for c in self.cycles[1:]]

    @property
    def levels(self):
        return np.array([c.V for c in self.cycles])

    def radii(self, alpha):
        """Matrix of cycle radii, shape ``alpha.shape + (n_cycles,)``; column 0 is the origin."""
        alpha = np.asarray(alpha, dtype=float)
        cols = [np.zeros(alpha.shape)] + [r.radius(alpha) for r in self._radial[1:]]
        return np.stack(cols, axis=-1)

    def query(self, dtheta, domega):
        """Vectorized ``V_pll``; ``inf`` outside the outermost cycle."""
        dtheta, domega = np.broadcast_arrays(np.asarray(dtheta, dtype=float), np.asarray(domega, dtype=float))
        rho = np.hypot(dtheta, domega)
        alpha = np.arctan2(domega, dtheta)
        R = self.radii(alpha)
        lv = self.levels
        # radii of on-curve vertices carry rounding error
        R = R * (1.0 + _ON_CURVE_RTOL)
        inside = R >= rho[..., None]
        outer = rho > R[..., -1]
        k = np.argmax(inside, axis=-1)
        k = np.maximum(k, 1)
        R1 = np.take_along_axis(R, k[..., None], -1)[..., 0]
        R0 = np.take_along_axis(R, (k - 1)[..., None], -1)[..., 0]
        V1, V0 = lv[k], lv[k - 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.clip((rho - R0) / (R1 - R0), 0.0, 1.0)
        val = V0 + s * (V1 - V0)
        val = np.where(rho == 0, 0.0, val)
        return np.where(outer, np.inf, val)

    def check_nesting(self):
        """Indices ``k`` where cycle ``k`` is not strictly inside cycle ``k+1``."""
        bad = []
        for k in range(1, len(self.cycles) - 1):
            pts = self.cycles[k].points
            alpha = np.arctan2(pts[:, 1], pts[:, 0])
            rho = np.hypot(pts[:, 0], pts[:, 1])
            if not np.all(rho < self._radial[k + 1].radius(alpha)):
                bad.append(k)
        return bad

    def to_csv(self, path):
        write_family_csv(self, path)


def query_vpll(dtheta, domega, fam):
    """``V_pll`` at a point; ``inf`` when outside ``Lambda(V_bar)``."""
    val = fam.query(dtheta, domega)
    return float(val) if np.ndim(val) == 0 else val


# -- cycle search ---------------------------------------------------------------

@dataclass
class FamilyConfig:
    V_seed: float | None = None
    V_step_min: float | None = None
    cycle_tol: float = 1e-7
    band_margin: float = 0.05
    max_ratio: float = 1.25
    max_revolutions: int = 200
    rtol: float = 1e-9
    atol: float = 1e-12
    samples_per_rev: int = 128
    sens_tol: float = 1e-7
    det_floor: float = 1e-8
    eps_margin: float = 0.1
    V_max: float | None = None


def _aitken(s):
    s0, s1, s2 = s[-3:]
    d1, d2 = s1 - s0, s2 - s1
    den = d2 - d1
    if den == 0 or not np.isfinite(den):
        return None
    ratio = d2 / d1 if d1 != 0 else np.inf
    if not (0 < abs(ratio) < 0.98):
        return None
    return s2 - d2 * d2 / den


def _section_state(section, V, gauge, model, extra=()):
    y = np.array([section, 0.0, *extra])
    z = consistent_kkt(section, 0.0, V, gauge, model)
    return y, z


def find_limit_cycle(V, gauge, model, warm=None, cfg=None, section_guess=None):
    """Converge onto the limit cycle at level ``V`` and sample one revolution.

    Integrates the comparison DAE from a point on the section
    ``{domega = 0, dtheta > 0}`` until successive section crossings differ
    by less than ``cfg.cycle_tol`` in ``dtheta``; the last revolution is
    returned. Aitken extrapolation of the return map is used to jump ahead.

    Raises
    ------
    NoCycle
        The trajectory leaves ``|dtheta| < pi`` or does not settle within
        ``cfg.max_revolutions``.
    """
    cfg = cfg or FamilyConfig()
    if section_guess is None:
        if warm is not None and warm.V > 0:
            if warm.section_prime is not None:
                section_guess = warm.section + (V - warm.V) * warm.section_prime
            else:
                section_guess = warm.section * np.sqrt(V / warm.V)
        else:
            section_guess = _linear_section_guess(V, gauge, model)
    period_est = warm.period if (warm is not None and np.isfinite(warm.period)) else _linear_period(model)
    max_step = period_est / cfg.samples_per_rev
    it = _SectionIteration(section_guess, cfg.cycle_tol, cfg.max_revolutions, relative=False,
                           bounds=(0.0, np.pi))

    def on_switch(t, y, z, m):
        new = -m
        if new == MODE_MAX and y[0] > 0:
            stop, jump = it.cross(t, y[0])
            if jump is not None:
                return Action(y=np.array([jump, 0.0]), mode=new)
            return Action(mode=new, stop=stop)
        return Action(mode=new)

    dae = comparison_dae(V, gauge, model, band=np.pi, on_switch=on_switch)
    solver = DaeSolver(dae, rtol=cfg.rtol, atol=cfg.atol)
    y0, z0 = _section_state(section_guess, V, gauge, model)
    try:
        tr = solver.integrate(DaeState(0.0, y0, z0, MODE_MAX), t_end=np.inf, max_step=max_step,
                              max_steps=400 * cfg.max_revolutions)
    except (StepFailure, LockInError) as exc:
        raise NoCycle(f"integration failed at V={V:.6g}: {exc}") from exc
    if any(e.name == "band" for e in tr.events):
        raise NoCycle(f"trajectory left the band at V={V:.6g}")
    if not it.converged:
        raise NoCycle(f"no convergence within {cfg.max_revolutions} revolutions at V={V:.6g}")
    t, y, z, modes = _last_revolution(tr, it.t_start)
    return LimitCycle(V=V, t=t, dtheta=y[:, 0].copy(), domega=y[:, 1].copy(), modes=modes,
                      alg=z[:, :10].copy(), period=float(t[-1] - t[0]), section=float(y[-1, 0]))


def return_map(V, section, gauge, model, cfg=None, max_step=None):
    """One revolution of the comparison system from ``(section, 0)``.

    Returns the next crossing of ``{domega = 0, dtheta > 0}`` and the
    trajectory of that revolution.
    """
    cfg = cfg or FamilyConfig()
    if max_step is None:
        max_step = _linear_period(model) / cfg.samples_per_rev

    def on_switch(t, y, z, m):
        return Action(mode=-m, stop=(-m == MODE_MAX and y[0] > 0))

    dae = comparison_dae(V, gauge, model, on_switch=on_switch)
    solver = DaeSolver(dae, rtol=cfg.rtol, atol=cfg.atol)
    y0, z0 = _section_state(section, V, gauge, model)
    tr = solver.integrate(DaeState(0.0, y0, z0, MODE_MAX), t_end=np.inf, max_step=max_step, max_steps=100_000)
    if any(e.name == "band" for e in tr.events) or not tr.stopped:
        raise NoCycle(f"revolution did not return to the section at V={V:.6g}")
    return float(tr.final.diff[0]), tr


class _SectionIteration:
    """Bookkeeping for a fixed-point iteration of a Poincare return map.

    The sequence starts at the initial guess; after two revolutions without
    a jump the next point is Aitken-extrapolated. Convergence is declared
    when one full revolution changes the section value by less than ``tol``
    (relative to the value when ``relative``).
    """

    def __init__(self, s0, tol, max_rev, relative, bounds=(-np.inf, np.inf)):
        self.seq = [s0]
        self.tol = tol
        self.max_rev = max_rev
        self.relative = relative
        self.bounds = bounds
        self.t_start = 0.0
        self.t_prev = 0.0
        self.n_rev = 0
        self.converged = False

    def cross(self, t, s):
        """Register a crossing; returns ``(stop, jump_to)``."""
        self.n_rev += 1
        self.t_start, self.t_prev = self.t_prev, t
        self.seq.append(s)
        scale = abs(s) if self.relative else 1.0
        if abs(self.seq[-1] - self.seq[-2]) <= self.tol * scale:
            self.converged = True
            return True, None
        if self.n_rev >= self.max_rev:
            return True, None
        if len(self.seq) >= 3:
            s_new = _aitken(self.seq)
            lo, hi = self.bounds
            if s_new is not None and lo < s_new < hi:
                self.seq = [s_new]
                return False, s_new
        return False, None


def _last_revolution(tr, t_start):
    t, y, z, modes = _dedupe(tr.t, tr.diff, tr.alg, tr.modes)
    sel = t >= t_start
    t = t[sel] - t_start
    return t, y[sel], z[sel], modes[sel]


def _dedupe(t, y, z, modes):
    """Keep the last sample among equal times (post-event state)."""
    t = np.asarray(t)
    keep = np.append(t[1:] != t[:-1], True)
    return t[keep], y[keep], z[keep], np.array(modes)[keep]


def _linear_period(model):
    eig = np.linalg.eigvals(pll_jacobian(model))
    return 2 * np.pi / abs(eig[0].imag)


def _linear_section_guess(V, gauge, model):
    lo, hi = extremal.f_range(0.0, 0.0, V, gauge, model)
    g_t, _ = model.g_partials(0.0, 0.0)
    return float(min(2.5 * 0.5 * (hi - lo) / abs(g_t), 1.0))


# -- sensitivity and gradient ---------------------------------------------------

def attach_sensitivity(cycle, gauge, model, cfg=None, prime_guess=None):
    """Integrate the 24-variable system around the cycle until the primes are periodic.

    The periodicity test uses the section value of ``dtheta'`` after the
    switch projection (``domega' = 0`` there). Returns the updated cycle and
    the algebraic primes along it.
    """
    cfg = cfg or FamilyConfig()
    V = cycle.V
    kp, ki = model.k_p, model.k_i
    if prime_guess is None:
        prime_guess = cycle.section / (2.0 * V)
    it = _SectionIteration(prime_guess, cfg.sens_tol, cfg.max_revolutions, relative=True)

    def project(y, z, m):
        f, _ = _fstar(np.array([y[0]]), np.array([y[1]]), z[None, :10], m, model)
        v = np.array([-kp * f[0] + y[1], -ki * f[0]])
        p = y[2:4] - (y[3] / v[1]) * v
        p[1] = 0.0
        return np.concatenate([y[:2], p])

    def on_switch(t, y, z, m):
        ynew = project(y, z, m)
        new = -m
        if new == MODE_MAX and y[0] > 0:
            stop, jump = it.cross(t, ynew[2])
            if jump is not None:
                ynew[2] = jump
            return Action(y=ynew, mode=new, stop=stop)
        return Action(y=ynew, mode=new)

    dae = sensitivity_dae(V, gauge, model, on_switch=on_switch)
    solver = DaeSolver(dae, rtol=cfg.rtol, atol=cfg.atol)
    max_step = cycle.period / cfg.samples_per_rev
    y0 = np.array([cycle.section, 0.0, prime_guess, 0.0])
    z0 = np.concatenate([cycle.alg[-1], np.zeros(10)])
    try:
        tr = solver.integrate(DaeState(0.0, y0, z0, MODE_MAX), t_end=np.inf, max_step=max_step,
                              max_steps=400 * cfg.max_revolutions)
    except (StepFailure, LockInError) as exc:
        raise SensitivityDiverged(str(exc)) from exc
    if not it.converged:
        raise SensitivityDiverged(f"primes not periodic at V={V:.6g}")
    t, y, z, modes = _last_revolution(tr, it.t_start)
    return replace(
        cycle, t=t, dtheta=y[:, 0].copy(), domega=y[:, 1].copy(), modes=modes, alg=z[:, :10].copy(),
        primes=y[:, 2:4].copy(), period=float(t[-1] - t[0]), section=float(y[-1, 0]),
        section_prime=float(y[-1, 2]),
    ), z[:, 10:]


def attach_gradient(cycle, model, det_floor=1e-8, max_degenerate=0.2):
    """Solve ``grad . velocity = 0``, ``grad . prime = 1`` at every sample.

    Samples whose two vectors are nearly parallel (relative determinant
    below ``det_floor``) are filled by arc-length interpolation.
    """
    v = cycle.velocity(model)
    p = cycle.primes
    det = v[:, 0] * p[:, 1] - v[:, 1] * p[:, 0]
    rel = np.abs(det) / np.maximum(np.linalg.norm(v, axis=1) * np.linalg.norm(p, axis=1), 1e-300)
    bad = rel < det_floor
    if bad.mean() > max_degenerate:
        raise GradientDegenerate(f"{bad.mean():.0%} of samples are degenerate at V={cycle.V:.6g}")
    with np.errstate(divide="ignore", invalid="ignore"):
        grad = np.stack([-v[:, 1] / det, v[:, 0] / det], axis=1)
    if np.any(bad):
        pts = cycle.points
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        good = ~bad
        L = s[-1]
        sg = np.concatenate([s[good] - L, s[good], s[good] + L])
        for j in range(2):
            gg = np.tile(grad[good, j], 3)
            grad[bad, j] = np.interp(s[bad], sg, gg)
    return replace(cycle, grad=grad, grad_filled=bad)


# -- continuation ---------------------------------------------------------------

def continue_family(gauge, model, cfg=None, sensitivity=True, progress=None):
    """Continue the limit cycle in ``V`` until it ceases to exist or leaves the band.

    Step control: on success the step doubles (capped so that consecutive
    levels differ by at most ``cfg.max_ratio``); on failure it halves; the
    family ends when the step falls below ``V_step_min``.
    """
    cfg = cfg or FamilyConfig()
    V_safe = singularity_clearance(gauge, model, cfg.eps_margin)
    V_seed = cfg.V_seed if cfg.V_seed is not None else seed_level(gauge, model, cfg)
    cycles = [LimitCycle.origin()]
    V = 0.0
    dV = V_seed
    warm = None
    V_cap = cfg.V_max if cfg.V_max is not None else np.inf
    while V < V_cap:
        V_try = min(V + dV, V_cap)
        ok = V_try < V_safe
        if ok:
            try:
                cyc = find_limit_cycle(V_try, gauge, model, warm=warm, cfg=cfg)
                ok = cyc.max_abs_dtheta() < np.pi - cfg.band_margin and cyc.signed_area() < 0
                if ok and sensitivity:
                    cyc = _with_gradient(cyc, gauge, model, cfg, warm)
            except (NoCycle, SensitivityDiverged, GradientDegenerate) as exc:
                log.info("level %.6g rejected: %s", V_try, exc)
                ok = False
        if ok:
            if len(cycles) > 1 and not _strictly_inside(cycles[-1], cyc):
                log.info("level %.6g rejected: nesting violated", V_try)
                ok = False
        if ok:
            cycles.append(cyc)
            warm = cyc
            V = V_try
            if progress:
                progress(V, cyc)
            dV = min(2 * dV, (cfg.max_ratio - 1.0) * V)
        else:
            if len(cycles) == 1 and dV < 1e-6 * V_seed:
                raise EmptyFamily("no limit cycle found even at the smallest level")
            dV *= 0.5
            step_min = cfg.V_step_min if cfg.V_step_min is not None else 1e-3 * max(V, V_seed)
            if dV < step_min:
                break
    if len(cycles) == 1:
        raise EmptyFamily("no limit cycle found")
    return CycleFamily(cycles=cycles, V_bar=cycles[-1].V)


def _with_gradient(cyc, gauge, model, cfg, warm):
    guess = None
    if warm is not None and warm.section_prime is not None:
        guess = warm.section_prime * np.sqrt(warm.V / cyc.V) if warm.V > 0 else None
    cyc, _ = attach_sensitivity(cyc, gauge, model, cfg, prime_guess=guess)
    return attach_gradient(cyc, model, det_floor=cfg.det_floor)


def _strictly_inside(inner, outer):
    rad = _Radial(outer.points)
    pts = inner.points
    alpha = np.arctan2(pts[:, 1], pts[:, 0])
    return bool(np.all(np.hypot(pts[:, 0], pts[:, 1]) < rad.radius(alpha)))


def seed_level(gauge, model, cfg, target_radius=1e-2):
    """Level whose limit cycle reaches ``dtheta ~ target_radius``.

    Near the origin the cycle radius grows like ``sqrt(V)``, so one probe
    cycle fixes the scale.
    """
    g_t, _ = model.g_partials(0.0, 0.0)
    lo, hi = extremal.f_range(0.0, 0.0, 1.0, gauge, model)
    d1 = 0.5 * (hi - lo)
    V_probe = (0.3 * target_radius * abs(g_t) / d1) ** 2
    cyc = find_limit_cycle(V_probe, gauge, model, cfg=cfg)
    return float(V_probe * (target_radius / cyc.max_abs_dtheta()) ** 2)


# -- export ---------------------------------------------------------------------

FAMILY_COLUMNS = ("V", "t", "dtheta", "domega", "dtheta_prime", "domega_prime", "grad_1", "grad_2")


def write_family_csv(fam, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FAMILY_COLUMNS)
        for c in fam.cycles[1:]:
            primes = c.primes if c.primes is not None else np.full((len(c.t), 2), np.nan)
            grad = c.grad if c.grad is not None else np.full((len(c.t), 2), np.nan)
            for k in range(len(c.t)):
                w.writerow([_fmt(v) for v in (c.V, c.t[k], c.dtheta[k], c.domega[k],
                                              primes[k, 0], primes[k, 1], grad[k, 0], grad[k, 1])])


def read_family_csv(path):
    """Rebuild a query-able family (points, primes, gradients) from CSV."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    cycles = [LimitCycle.origin()]
    for V in np.unique(data["V"]):
        sel = data[data["V"] == V]
        cycles.append(LimitCycle(
            V=float(V), t=sel["t"], dtheta=sel["dtheta"], domega=sel["domega"],
            modes=np.where(sel["domega"] >= 0, MODE_MIN, MODE_MAX), alg=np.full((len(sel), 10), np.nan),
            period=float(sel["t"][-1] - sel["t"][0]), section=float(sel["dtheta"][0]),
            primes=np.column_stack([sel["dtheta_prime"], sel["domega_prime"]]),
            grad=np.column_stack([sel["grad_1"], sel["grad_2"]]),
        ))
    return CycleFamily(cycles=cycles, V_bar=cycles[-1].V)


def _fmt(v):
    return format(float(v), ".17g")
