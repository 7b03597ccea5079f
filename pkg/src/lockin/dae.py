"""Semi-explicit index-1 DAE integrator with event location.

Problems have the form::

    y' = F(t, y, z, mode)
    0  = G(t, y, z, mode)

where ``mode`` is a discrete label that only changes at events. ``F`` and
``G`` are vectorized over a leading axis: they receive ``t`` of shape
``(k,)``, ``y`` of shape ``(k, n_diff)`` and ``z`` of shape ``(k, n_alg)``.

Steps use the three-stage Radau IIA collocation method (order 5, one-step,
stiffly accurate) with differential and algebraic stage values solved
together by simplified Newton. The local error is estimated by step
doubling. Discontinuities of the vector field are handled by landing
exactly on the switching surface and restarting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .exceptions import IndexViolation, StepFailure

log = logging.getLogger(__name__)

_S6 = np.sqrt(6.0)
RADAU_C = np.array([(4 - _S6) / 10, (4 + _S6) / 10, 1.0])
RADAU_A = np.array(
    [
        [(88 - 7 * _S6) / 360, (296 - 169 * _S6) / 1800, (-2 + 3 * _S6) / 225],
        [(296 + 169 * _S6) / 1800, (88 + 7 * _S6) / 360, (-2 - 3 * _S6) / 225],
        [(16 - _S6) / 36, (16 + _S6) / 36, 1 / 9],
    ]
)
_NODES = np.concatenate([[0.0], RADAU_C])
ORDER = 5


@dataclass
class Action:
    """What an event callback asks the integrator to do."""

    y: np.ndarray | None = None
    mode: Any = None
    stop: bool = False


@dataclass
class Event:
    """Scalar event ``func(t, y, z, mode) = 0``.

    ``direction`` is +1 (rising), -1 (falling) or 0 (either). With
    ``land=True`` the integrator steps exactly onto the event before
    calling ``action`` -- required whenever the action switches the
    vector field.
    """

    name: str
    func: Callable
    direction: int = 0
    terminal: bool = False
    land: bool = False
    action: Callable | None = None


@dataclass
class SemiExplicitDae:
    n_diff: int
    n_alg: int
    rhs: Callable
    residual: Callable
    events: list = field(default_factory=list)


@dataclass
class DaeState:
    t: float
    diff: np.ndarray
    alg: np.ndarray
    mode: Any = None


@dataclass
class EventRecord:
    name: str
    t: float
    diff: np.ndarray
    alg: np.ndarray
    mode: Any


@dataclass
class Trajectory:
    t: np.ndarray
    diff: np.ndarray
    alg: np.ndarray
    modes: list
    events: list
    final: DaeState
    stopped: bool = False


@dataclass
class _Piece:
    """Collocation polynomial on ``[t0, t0 + h]``."""

    t0: float
    h: float
    nodes_y: np.ndarray  # (4, n_diff)
    nodes_z: np.ndarray  # (4, n_alg)

    def __call__(self, t):
        tau = (t - self.t0) / self.h
        w = np.ones(4)
        for i in range(4):
            for j in range(4):
                if i != j:
                    w[i] *= (tau - _NODES[j]) / (_NODES[i] - _NODES[j])
        return w @ self.nodes_y, w @ self.nodes_z


class DaeSolver:
    """Adaptive Radau IIA integrator for :class:`SemiExplicitDae`.

    Parameters
    ----------
    rtol, atol : float
        Local error tolerances (weighted RMS norm over all variables).
    h_min : float
        Smallest admissible step; failing there raises :class:`StepFailure`.
    """

    def __init__(self, dae, rtol=1e-8, atol=1e-10, h_min=1e-12, max_newton=8, event_tol=1e-10):
        self.dae = dae
        self.rtol = rtol
        self.atol = atol
        self.h_min = h_min
        self.max_newton = max_newton
        self.event_tol = event_tol
        self.ny = dae.n_diff
        self.nz = dae.n_alg
        self.n = self.ny + self.nz

    # -- evaluation helpers ---------------------------------------------
    def _eval(self, t, Y, Z, mode):
        return self.dae.rhs(t, Y, Z, mode), self.dae.residual(t, Y, Z, mode)

    def jacobian(self, t, y, z, mode):
        """Forward-difference Jacobian blocks ``(F_y, F_z, G_y, G_z)``."""
        base = np.concatenate([y, z])
        eps = 1e-7 * np.maximum(np.abs(base), 1e-3)
        pts = np.repeat(base[None], self.n + 1, axis=0)
        pts[1:] += np.diag(eps)
        tt = np.full(self.n + 1, t)
        F, G = self._eval(tt, pts[:, : self.ny], pts[:, self.ny :], mode)
        dF = ((F[1:] - F[0]) / eps[:, None]).T
        dG = ((G[1:] - G[0]) / eps[:, None]).T
        return dF[:, : self.ny], dF[:, self.ny :], dG[:, : self.ny], dG[:, self.ny :]

    def consistent(self, t, y, z, mode, tol=1e-13, max_iter=30):
        """Solve ``G(t, y, z) = 0`` for ``z`` starting from ``z``."""
        z = np.array(z, dtype=float)
        if self.nz == 0:
            return z
        for _ in range(max_iter):
            G = self.dae.residual(np.array([t]), y[None], z[None], mode)[0]
            _, _, _, Gz = self.jacobian(t, y, z, mode)
            if np.linalg.cond(Gz) > 1e14:
                raise IndexViolation("algebraic Jacobian is singular")
            dz = np.linalg.solve(Gz, G)
            z -= dz
            if np.linalg.norm(dz) <= tol * (1.0 + np.linalg.norm(z)):
                return z
        raise StepFailure("could not make algebraic variables consistent")

    def _norm(self, err, ref):
        w = self.atol + self.rtol * np.abs(ref)
        return np.sqrt(np.mean((err / w) ** 2))

    # -- one Radau IIA step ---------------------------------------------
    def _radau(self, t, y, z, h, mode, jac):
        Fy, Fz, Gy, Gz = jac
        ny, nz, n = self.ny, self.nz, self.n
        E = np.zeros((n, n))
        E[:ny, :ny] = np.eye(ny)
        E[ny:, :ny] = Gy
        E[ny:, ny:] = Gz
        Fb = np.zeros((n, n))
        Fb[:ny, :ny] = Fy
        Fb[:ny, ny:] = Fz
        M = np.kron(np.eye(3), E) - h * np.kron(RADAU_A, Fb)
        try:
            lu = lu_factor(M, check_finite=True)
        except (ValueError, np.linalg.LinAlgError):
            return None
        tt = t + RADAU_C * h
        F0 = self.dae.rhs(np.array([t]), y[None], z[None], mode)[0]
        Y = y[None] + RADAU_C[:, None] * h * F0[None]
        Z = np.repeat(z[None], 3, axis=0)
        ref = np.abs(np.concatenate([np.repeat(y[None], 3, 0), Z], axis=1)).ravel()
        w = self.atol + self.rtol * ref
        prev = np.inf
        for _ in range(self.max_newton):
            F, G = self._eval(tt, Y, Z, mode)
            R1 = Y - y[None] - h * (RADAU_A @ F)
            R = np.concatenate([R1, G], axis=1).ravel()
            if not np.all(np.isfinite(R)):
                return None
            d = lu_solve(lu, R).reshape(3, n)
            Y = Y - d[:, :ny]
            Z = Z - d[:, ny:]
            dn = np.sqrt(np.mean((d.ravel() / w) ** 2))
            if dn < 1e-3:
                return Y, Z
            if dn > 2 * prev and prev < np.inf:
                return None
            prev = dn
        return None

    def adaptive_step(self, t, y, z, h, mode, h_limit=np.inf):
        """Take one error-controlled step of size at most ``h``.

        Returns ``(t_new, y_new, z_new, pieces, h_next)`` where ``pieces``
        are the two half-step collocation polynomials.
        """
        jac = self.jacobian(t, y, z, mode)
        h = min(h, h_limit)
        while True:
            clipped = h >= h_limit
            big = self._radau(t, y, z, h, mode, jac)
            half1 = self._radau(t, y, z, 0.5 * h, mode, jac) if big is not None else None
            half2 = None
            if half1 is not None:
                half2 = self._radau(t + 0.5 * h, half1[0][-1], half1[1][-1], 0.5 * h, mode, jac)
            if half2 is None:
                if h <= self.h_min:
                    raise StepFailure(f"Newton failed at minimum step, t={t:.6g}")
                h *= 0.25
                continue
            y_new, z_new = half2[0][-1], half2[1][-1]
            err_v = np.concatenate([y_new - big[0][-1], z_new - big[1][-1]]) / (2**ORDER - 1)
            ref = np.maximum(np.abs(np.concatenate([y, z])), np.abs(np.concatenate([y_new, z_new])))
            err = self._norm(err_v, ref)
            if err <= 1.0:
                break
            if h <= self.h_min:
                raise StepFailure(f"error test failed at minimum step, t={t:.6g}")
            h *= max(0.2, 0.9 * err ** (-1.0 / (ORDER + 1)))
        pieces = [
            _Piece(t, 0.5 * h, np.vstack([y, half1[0]]), np.vstack([z, half1[1]])),
            _Piece(t + 0.5 * h, 0.5 * h, np.vstack([half1[0][-1], half2[0]]),
                   np.vstack([half1[1][-1], half2[1]])),
        ]
        fac = min(4.0, max(0.2, 0.9 * max(err, 1e-10) ** (-1.0 / (ORDER + 1))))
        t_new = t + h
        if clipped:
            t_new = t + h_limit
        return t_new, y_new, z_new, pieces, h * fac

    # -- driver ----------------------------------------------------------
    def integrate(self, state0, t_end, h0=None, max_step=np.inf, max_steps=1_000_000,
                  record=True, events=None):
        """Integrate from ``state0`` up to ``t_end`` or a terminal event.

        Returns a :class:`Trajectory` with the accepted (half-)step points
        and every located event.
        """
        events = self.dae.events if events is None else events
        t = float(state0.t)
        y = np.array(state0.diff, dtype=float)
        mode = state0.mode
        z = self.consistent(t, y, np.array(state0.alg, dtype=float), mode)
        h = h0 if h0 is not None else min(max_step, 1e-3 * max(abs(t_end - t), 1.0))
        ts, ys, zs, ms = [t], [y], [z], [mode]
        recs = []
        land = None  # (event index, time): stepping exactly onto a switching surface
        gvals = [self._event_value(ev, t, y, z, mode) for ev in events]
        steps = 0
        stopped = False

        def push(tt, yy, zz, mm):
            if record:
                ts.append(tt), ys.append(yy), zs.append(zz), ms.append(mm)

        while t < t_end and steps < max_steps:
            steps += 1
            limit = (t_end if land is None else land[1]) - t
            h_try = min(h, max_step)
            t_new, y_new, z_new, pieces, h_next = self.adaptive_step(t, y, z, h_try, mode, h_limit=limit)

            if land is not None and t_new >= land[1]:
                k = land[0]
                ev = events[k]
                t, y, z = land[1], y_new, z_new
                recs.append(EventRecord(ev.name, t, y.copy(), z.copy(), mode))
                act = ev.action(t, y, z, mode) if ev.action else None
                push(t, y, z, mode)
                if act is not None:
                    if act.y is not None:
                        y = np.array(act.y, dtype=float)
                    if act.mode is not None:
                        mode = act.mode
                    z = self.consistent(t, y, z, mode)
                    push(t, y, z, mode)
                land = None
                gvals = [self._event_value(e, t, y, z, mode) for e in events]
                gvals[k] = 0.0
                h = max(h_next, 1e-3 * abs(h))
                if ev.terminal or (act is not None and act.stop):
                    stopped = True
                    break
                continue

            hit = None
            for k, ev in enumerate(events):
                if land is not None and k == land[0]:
                    continue
                g0 = gvals[k]
                for piece in pieces:
                    g1 = self._event_value(ev, piece.t0 + piece.h, *piece(piece.t0 + piece.h), mode)
                    if self._crossed(g0, g1, ev.direction):
                        tc = self._locate(ev, piece, g0, mode)
                        if hit is None or tc < hit[1]:
                            hit = (k, tc, piece)
                        break
                    g0 = g1
            if hit is not None:
                k, tc, piece = hit
                ev = events[k]
                if ev.land:
                    land = (k, tc)
                    h = tc - t
                    continue
                yc, zc = piece(tc)
                recs.append(EventRecord(ev.name, tc, yc, zc, mode))
                act = ev.action(tc, yc, zc, mode) if ev.action else None
                if ev.terminal or (act is not None and act.stop):
                    t, y = tc, yc
                    z = self.consistent(t, y, zc, mode)
                    push(t, y, z, mode)
                    stopped = True
                    break
                if act is not None and (act.y is not None or act.mode is not None):
                    t = tc
                    y = np.array(act.y if act.y is not None else yc, dtype=float)
                    if act.mode is not None:
                        mode = act.mode
                    z = self.consistent(t, y, zc, mode)
                    push(t, y, z, mode)
                    gvals = [self._event_value(e, t, y, z, mode) for e in events]
                    gvals[k] = 0.0
                    h = h_next
                    continue

            push(pieces[1].t0, pieces[1].nodes_y[0], pieces[1].nodes_z[0], mode)
            push(t_new, y_new, z_new, mode)
            t, y, z = t_new, y_new, z_new
            gvals = [self._event_value(e, t, y, z, mode) for e in events]
            h = h_next
        if not stopped and t < t_end and steps >= max_steps:
            raise StepFailure(f"step cap {max_steps} reached at t={t:.6g}")
        if not record:
            ts, ys, zs, ms = [t], [y], [z], [mode]
        return Trajectory(
            t=np.array(ts), diff=np.array(ys), alg=np.array(zs).reshape(len(ts), self.nz),
            modes=ms, events=recs, final=DaeState(t, y, z, mode), stopped=stopped,
        )

    @staticmethod
    def _event_value(ev, t, y, z, mode):
        return float(ev.func(t, y, z, mode))

    @staticmethod
    def _crossed(g0, g1, direction):
        if direction >= 0 and g0 < 0 <= g1:
            return True
        if direction <= 0 and g0 > 0 >= g1:
            return True
        return False

    def _locate(self, ev, piece, g0, mode):
        a, b = piece.t0, piece.t0 + piece.h
        ga = g0
        while b - a > self.event_tol:
            m = 0.5 * (a + b)
            gm = self._event_value(ev, m, *piece(m), mode)
            if self._crossed(ga, gm, ev.direction):
                b = m
            else:
                a, ga = m, gm
        return b


def step(dae, state, h_try, **kw):
    """Take one accepted step from a consistent ``state``; returns ``(state', h_next)``."""
    solver = DaeSolver(dae, **kw)
    y = np.array(state.diff, dtype=float)
    z = solver.consistent(state.t, y, np.array(state.alg, dtype=float), state.mode)
    t_new, y_new, z_new, _, h_next = solver.adaptive_step(state.t, y, z, h_try, state.mode)
    return DaeState(t_new, y_new, z_new, state.mode), h_next


def integrate(dae, state0, t_end, **kw):
    """Convenience wrapper around :meth:`DaeSolver.integrate`."""
    solver_kw = {k: kw.pop(k) for k in ("rtol", "atol", "h_min", "max_newton", "event_tol") if k in kw}
    return DaeSolver(dae, **solver_kw).integrate(state0, t_end, **kw)
