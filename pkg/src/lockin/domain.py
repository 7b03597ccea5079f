"""Lock-in domain estimates in the ``(V_cc, V_pll)`` plane.

The trivial estimate is the square ``[0, V_bar]^2``. The extended estimate
is ``V_pll <= Phi(V_cc)`` where ``Phi = V_bar`` on ``[0, V_bar]`` and, to
the right, solves::

    Phi'(V) = -F(Phi(V), V) / (gamma V),    Phi(V_bar) = V_bar

until ``Phi`` reaches zero at ``V_bar_bar``. The ODE is integrated in
``u = ln V`` (``dPhi/du = -F / gamma``), which removes the ``1/V`` factor
and keeps the step count independent of how far the curve reaches; the
singularity at ``V = 0`` is never approached since integration starts at
``V_bar > 0``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .exceptions import ArtifactInvalid, GridExhausted, NoExtension
from .gauge import v_cc

PHI_SPACING = 1 / 200
LOG_SPACING = 0.01


@dataclass(frozen=True)
class DomainEstimate:
    """``V_bar``, ``V_bar_bar`` and the monotone table ``vcc -> phi``."""

    V_bar: float
    V_bar_bar: float
    vcc: np.ndarray
    phi: np.ndarray

    def phi_at(self, v):
        """Interpolated ``Phi``; ``-inf`` beyond ``V_bar_bar`` (no ``V_pll`` qualifies)."""
        v = np.asarray(v, dtype=float)
        out = np.interp(v, self.vcc, self.phi)
        out = np.where(v > self.V_bar_bar, -np.inf, out)
        return float(out) if out.ndim == 0 else out

    def contains_levels(self, vcc, vpll):
        """Membership in the ``(V_cc, V_pll)`` plane (closed set)."""
        return np.asarray(vpll) <= self.phi_at(vcc)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("vcc", "phi"))
            for a, b in zip(self.vcc, self.phi):
                w.writerow([format(float(a), ".17g"), format(float(b), ".17g")])

    @classmethod
    def from_csv(cls, path, V_bar, V_bar_bar):
        d = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
        vcc, phi = d["vcc"].copy(), d["phi"].copy()
        if not (np.all(np.isfinite(vcc)) and np.all(np.isfinite(phi))):
            raise ArtifactInvalid(f"{path}: non-numeric or non-finite entries")
        if np.any(np.diff(vcc) <= 0):
            raise ArtifactInvalid(f"{path}: vcc column is not increasing")
        return cls(float(V_bar), float(V_bar_bar), vcc, phi)

    def summary(self, gamma, version=None):
        return {"V_bar": float(self.V_bar), "V_bar_bar": float(self.V_bar_bar),
                "gamma": float(gamma), "version": version}

    def to_json(self, path, gamma, version=None, extra=None):
        data = self.summary(gamma, version)
        data.update(extra or {})
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_json_float)
            fh.write("\n")


def _json_float(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(type(o).__name__)


def trivial_estimate(V_bar):
    """The square ``[0, V_bar]^2``."""
    V_bar = float(V_bar)
    return DomainEstimate(V_bar, V_bar, np.array([0.0, V_bar]), np.array([V_bar, V_bar]))


def solve_phi(gb, gamma, V_bar, rtol=1e-8):
    """Integrate the boundary curve from ``V_bar`` until ``Phi = 0``.

    Parameters
    ----------
    gb : GrowthBound
        Any object with ``vcc_grid`` and ``__call__(vpll, vcc)`` works.
    gamma : float
        Decay rate of the gauge.
    V_bar : float

    Raises
    ------
    NoExtension
        ``F(V_bar, v) < 0`` along the whole grid: the estimate stays the square.
    GridExhausted
        The grid ends before ``Phi`` reaches zero.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    V_bar = float(V_bar)
    v_end = float(gb.vcc_grid[-1])
    if v_end <= V_bar:
        raise GridExhausted("vcc grid does not extend beyond V_bar")

    def rhs(u, y):
        p = min(max(y[0], 0.0), V_bar)
        d = -float(gb(p, np.exp(u))) / gamma
        if y[0] >= V_bar and d > 0:
            d = 0.0
        return [d]

    def hit_zero(u, y):
        return y[0]

    hit_zero.terminal = True
    hit_zero.direction = -1
    u0, u1 = np.log(V_bar), np.log(v_end)
    sol = solve_ivp(rhs, (u0, u1), [V_bar], method="RK45", events=hit_zero, dense_output=True,
                    max_step=LOG_SPACING * 10, rtol=rtol, atol=rtol * V_bar)
    if not sol.t_events[0].size:
        if np.all(sol.y[0] >= V_bar) and np.all(np.asarray(gb(V_bar, np.asarray(gb.vcc_grid))) < 0):
            raise NoExtension("growth bound negative along the whole grid")
        raise GridExhausted(f"Phi = {sol.y[0, -1]:.6g} > 0 at the end of the vcc grid ({v_end:.6g})")
    u_end = float(sol.t_events[0][0])
    u = _refine(sol, u0, u_end, V_bar)
    phi = np.clip(sol.sol(u)[0], 0.0, V_bar)
    phi = np.minimum.accumulate(phi)
    phi[0], phi[-1] = V_bar, 0.0
    vcc = np.exp(u)
    vcc[0], vcc[-1] = V_bar, np.exp(u_end)
    return DomainEstimate(V_bar, float(vcc[-1]), np.concatenate([[0.0], vcc]), np.concatenate([[V_bar], phi]))


def _refine(sol, u0, u1, V_bar):
    """Accepted steps, refined to ``|dPhi| <= V_bar/200`` and ``d ln V <= 0.01``."""
    knots = np.unique(np.concatenate([[u0], sol.t[(sol.t > u0) & (sol.t < u1)], [u1]]))
    out = [knots[:1]]
    for a, b in zip(knots[:-1], knots[1:]):
        dphi = abs(sol.sol(b)[0] - sol.sol(a)[0])
        n = max(1, int(np.ceil(dphi / (PHI_SPACING * V_bar))), int(np.ceil((b - a) / LOG_SPACING)))
        out.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(out)


def contains(dtheta, domega, x, est, fam, gauge):
    """Membership in the estimate ``V_pll(dtheta, domega) <= Phi(V_cc(x))``."""
    vcc = v_cc(np.asarray(x, dtype=float), gauge)
    vpll = fam.query(dtheta, domega)
    out = (vcc <= est.V_bar_bar) & (vpll <= est.phi_at(vcc))
    return bool(out) if np.ndim(out) == 0 else out
