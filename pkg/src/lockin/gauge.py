"""Quadratic Lyapunov function ``V_cc(x) = x^T P x`` of the current controller."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .exceptions import GaugeInfeasible, NotHurwitz


@dataclass(frozen=True)
class Gauge:
    """Ellipsoidal gauge with guaranteed decay ``dV/dt <= -gamma V``."""

    P: np.ndarray
    gamma: float

    @cached_property
    def chol(self):
        """Lower Cholesky factor ``L`` with ``P = L L^T``."""
        return np.linalg.cholesky(self.P)

    @cached_property
    def P_inv(self):
        return np.linalg.inv(self.P)

    def boundary_points(self, u, V):
        """Map unit vectors ``u`` (rows) onto the ellipsoid ``x^T P x = V``."""
        u = np.asarray(u, dtype=float)
        return np.sqrt(V) * np.linalg.solve(self.chol.T, u.T).T


def build_gauge(A, margin=0.5):
    """Solve the shifted Lyapunov equation for a decay-rate certified ``P``.

    ``gamma = 2 (1 - margin) |max Re eig(A)|`` and ``P`` solves
    ``(A + gamma/2 I)^T P + P (A + gamma/2 I) = -I``.
    """
    A = np.asarray(A, dtype=float)
    if not 0 < margin < 1:
        raise ValueError("margin must lie in (0, 1)")
    abscissa = np.max(np.linalg.eigvals(A).real)
    if abscissa >= 0:
        raise NotHurwitz(f"spectral abscissa {abscissa:.6g} >= 0")
    gamma = 2.0 * (1.0 - margin) * abs(abscissa)
    n = A.shape[0]
    shifted = A + 0.5 * gamma * np.eye(n)
    P = solve_continuous_lyapunov(shifted.T, -np.eye(n))
    P = 0.5 * (P + P.T)
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise GaugeInfeasible("Lyapunov solution is not positive definite")
    M = A.T @ P + P @ A + gamma * P
    if np.max(np.linalg.eigvalsh(0.5 * (M + M.T))) >= 0:
        raise GaugeInfeasible("A^T P + P A + gamma P is not negative definite")
    P.setflags(write=False)
    return Gauge(P=P, gamma=float(gamma))


def v_cc(x, gauge):
    x = np.asarray(x, dtype=float)
    return np.einsum("...i,ij,...j->...", x, gauge.P, x)


def singularity_clearance(gauge, model, eps_margin=0.1):
    """Largest ``V`` keeping ``|nu^T x| <= (1 - eps_margin)|mu|`` on the ellipsoid.

    Returns ``inf`` when ``nu = 0``.
    """
    q = float(model.nu @ gauge.P_inv @ model.nu)
    if q == 0.0:
        return np.inf
    return ((1.0 - eps_margin) * model.mu) ** 2 / q
