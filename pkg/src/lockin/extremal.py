"""Extremize ``f`` over the ellipsoid ``x^T P x <= V``.

Three independent routes are provided:

* :func:`tangent_extremum` -- closed form. ``f`` is linear-fractional, so
  its level sets ``{f = c}`` are hyperplanes ``(c nu - h)^T x = c mu - g``;
  the attainable values of ``f`` on the ellipsoid are the ``c`` for which
  the hyperplane meets it, an interval whose ends solve a quadratic.
* :func:`solve_kkt` -- Newton on the boundary optimality conditions
  ``x^T P x = V``, ``P x = lam (s b + H x)`` (``s`` is the model's
  gradient sign), seeded by the closed form or a warm start.
* :func:`oracle_extremize` -- dense quasi-uniform sampling of the boundary
  plus projected-gradient polishing; used only for verification.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from .exceptions import NoConvergence, WrongBranch
from .model import eval_f

log = logging.getLogger(__name__)

MAX_ITER = 50
RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class ExtremalPoint:
    x_star: np.ndarray
    lam: float
    f_value: float
    sense: str


def _sense_sign(sense):
    if sense == "min":
        return -1.0
    if sense == "max":
        return 1.0
    raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")


def f_range(dtheta, domega, V, gauge, model):
    """Closed-form ``(min f, max f)`` over ``x^T P x <= V`` (broadcasting)."""
    Q = gauge.P_inv
    g = np.asarray(model.g(dtheta, domega), dtype=float)
    h = model.h(domega)
    nu = model.nu
    mu = model.mu
    V = np.asarray(V, dtype=float)
    qnn = nu @ Q @ nu
    qhn = h @ (Q @ nu)
    qhh = np.einsum("...i,ij,...j->...", h, Q, h)
    a2 = mu * mu - V * qnn
    b1 = mu * g - V * qhn
    c0 = g * g - V * qhh
    disc = np.sqrt(np.maximum(b1 * b1 - a2 * c0, 0.0))
    # numerically stable roots of a2 c^2 - 2 b1 c + c0
    q = b1 + np.copysign(disc, b1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(q != 0, c0 / q, b1 / a2)
        r2 = np.where(q != 0, q / a2, b1 / a2)
    return np.minimum(r1, r2), np.maximum(r1, r2)


def tangent_extremum(dtheta, domega, V, sense, gauge, model):
    """Closed-form extremizer: the tangency point of the optimal level hyperplane.

    Returns
    -------
    x_star : ndarray, shape (..., 4)
    f_value : ndarray
    """
    lo, hi = f_range(dtheta, domega, V, gauge, model)
    c = lo if sense == "min" else hi
    g = np.asarray(model.g(dtheta, domega), dtype=float)
    a = c[..., None] * model.nu - model.h(domega)
    Qa = a @ gauge.P_inv
    aQa = np.sum(a * Qa, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(aQa > 0, (c * model.mu - g) / aQa, 0.0)
    return t[..., None] * Qa, c


def kkt_direction(dtheta, domega, x, model):
    """``s b + H x`` -- the gradient of f up to the positive factor ``(mu - nu^T x)^2``."""
    Hx = np.einsum("...ij,...j->...i", model.H(domega), x)
    return model.grad_sign * model.b(dtheta, domega) + Hx


def multiplier(dtheta, domega, x, gauge, model):
    """Least-squares Lagrange multiplier for a boundary point ``x``."""
    r = kkt_direction(dtheta, domega, x, model)
    Px = x @ gauge.P
    return np.sum(Px * r, axis=-1) / np.sum(r * r, axis=-1)


def kkt_residual(dtheta, domega, V, x, lam, gauge, model):
    Px = x @ gauge.P
    r = kkt_direction(dtheta, domega, x, model)
    r1 = np.sum(x * Px, axis=-1) - V
    r2 = Px - np.asarray(lam)[..., None] * r
    return r1, r2


def kkt_newton(dtheta, domega, V, x0, lam0, gauge, model, tol=RESIDUAL_TOL, max_iter=MAX_ITER):
    """Batched Newton solve of the boundary KKT system.

    All inputs broadcast over a leading batch axis. Returns ``(x, lam,
    converged)``.
    """
    dtheta, domega, V = np.broadcast_arrays(
        np.atleast_1d(np.asarray(dtheta, dtype=float)),
        np.atleast_1d(np.asarray(domega, dtype=float)),
        np.atleast_1d(np.asarray(V, dtype=float)),
    )
    n = dtheta.shape[0]
    x = np.array(np.broadcast_to(x0, (n, 4)), dtype=float)
    lam = np.array(np.broadcast_to(lam0, (n,)), dtype=float)
    P = gauge.P
    H = model.H(domega)
    if H.ndim == 2:
        H = np.broadcast_to(H, (n, 4, 4))
    sb = model.grad_sign * model.b(dtheta, domega)
    converged = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        Px = x @ P
        r = sb + np.einsum("nij,nj->ni", H, x)
        r1 = np.sum(x * Px, axis=-1) - V
        r2 = Px - lam[:, None] * r
        scale2 = np.linalg.norm(Px, axis=-1) + np.abs(lam) * np.linalg.norm(r, axis=-1)
        ok = (np.abs(r1) <= tol * np.maximum(V, 1e-300)) & (
            np.linalg.norm(r2, axis=-1) <= tol * np.maximum(scale2, 1e-300)
        )
        converged = ok
        if np.all(ok):
            break
        J = np.zeros((n, 5, 5))
        J[:, 0, :4] = 2.0 * Px
        J[:, 1:, :4] = P[None] - lam[:, None, None] * H
        J[:, 1:, 4] = -r
        rhs = np.concatenate([r1[:, None], r2], axis=1)
        try:
            step = np.linalg.solve(J, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        step[ok] = 0.0
        x = x - step[:, :4]
        lam = lam - step[:, 4]
    return x, lam, converged


def solve_kkt_batch(dtheta, domega, V, sense, gauge, model, x0=None, lam0=None):
    """Vectorized :func:`solve_kkt`; returns ``(x, lam, f)`` arrays.

    Without a warm start the closed-form tangency point seeds Newton; any
    instance that fails or lands on the wrong multiplier sign is reseeded
    from the closed form once.
    """
    dtheta = np.atleast_1d(np.asarray(dtheta, dtype=float))
    domega = np.atleast_1d(np.asarray(domega, dtype=float))
    dtheta, domega = np.broadcast_arrays(dtheta, domega)
    V = np.broadcast_to(np.asarray(V, dtype=float), dtheta.shape)
    sgn = _sense_sign(sense)
    seeded = x0 is None
    if seeded:
        x0, _ = tangent_extremum(dtheta, domega, V, sense, gauge, model)
        lam0 = multiplier(dtheta, domega, x0, gauge, model)
    elif lam0 is None:
        lam0 = multiplier(dtheta, domega, x0, gauge, model)
    x, lam, conv = kkt_newton(dtheta, domega, V, x0, lam0, gauge, model)
    bad = ~conv | (np.sign(lam) != sgn)
    if np.any(bad) and not seeded:
        log.debug("reseeding %d KKT solves from the closed form", int(bad.sum()))
        xs, _ = tangent_extremum(dtheta[bad], domega[bad], V[bad], sense, gauge, model)
        ls = multiplier(dtheta[bad], domega[bad], xs, gauge, model)
        xb, lb, cb = kkt_newton(dtheta[bad], domega[bad], V[bad], xs, ls, gauge, model)
        x[bad], lam[bad], conv[bad] = xb, lb, cb
        bad = ~conv | (np.sign(lam) != sgn)
    zero = V <= 0
    x[zero] = 0.0
    lam[zero] = 0.0
    bad &= ~zero
    if np.any(~conv & ~zero):
        raise NoConvergence(f"KKT Newton failed on {int((~conv & ~zero).sum())} instances")
    if np.any(bad):
        raise WrongBranch(f"multiplier sign mismatch for sense={sense!r}")
    f = eval_f(dtheta, domega, x, model)
    return x, lam, f


def solve_kkt(dtheta, domega, V, sense, gauge, model, warm_start=None):
    """Extremal point of ``f(dtheta, domega, .)`` on the ellipsoid boundary.

    Parameters
    ----------
    dtheta, domega : float
    V : float
        Ellipsoid level, ``0 <= V < V_safe``.
    sense : {'min', 'max'}
    warm_start : ExtremalPoint, optional
        Previous solution used as the Newton seed.

    Raises
    ------
    NoConvergence, WrongBranch
    """
    if warm_start is not None:
        x0, lam0 = warm_start.x_star, warm_start.lam
    else:
        x0 = lam0 = None
    x, lam, f = solve_kkt_batch(dtheta, domega, V, sense, gauge, model, x0, lam0)
    return ExtremalPoint(x_star=x[0], lam=float(lam[0]), f_value=float(f[0]), sense=sense)


def f_star(dtheta, domega, V, gauge, model, warm=None):
    """Worst-case forcing: min of f for ``domega >= 0``, max otherwise."""
    sense = "min" if domega >= 0 else "max"
    return solve_kkt(dtheta, domega, V, sense, gauge, model, warm_start=warm).f_value


# -- sampling oracle ------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    x_star: np.ndarray
    f_value: float
    sense: str
    interior_best: float
    lam: float = float("nan")


def unit_directions(n, dim=4, seed=0):
    """Quasi-uniform unit vectors from a scrambled Sobol sequence."""
    m = max(int(np.ceil(np.log2(max(n, 2)))), 1)
    pts = qmc.Sobol(dim, scramble=True, seed=seed).random_base2(m)[:n]
    z = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def oracle_extremize(dtheta, domega, V, sense, gauge, model, n=20000, n_interior=2000,
                     polish_steps=60, seed=0):
    """Brute-force extremum of f over the ellipsoid.

    Samples ``n`` boundary points ``sqrt(V) L^{-T} u`` and ``n_interior``
    interior points, then refines the best boundary sample by projected
    gradient steps on the sphere in whitened coordinates (finite-difference
    gradients, so the check stays independent of the analytic formulas).
    """
    sgn = _sense_sign(sense)
    if V <= 0:
        f0 = float(eval_f(dtheta, domega, np.zeros(4), model))
        return OracleResult(np.zeros(4), f0, sense, f0)
    u = unit_directions(n, seed=seed)
    Linv_T = np.linalg.inv(gauge.chol.T)
    sq = np.sqrt(V)

    def obj(y):
        return sgn * eval_f(dtheta, domega, sq * (y @ Linv_T.T), model)

    vals = obj(u)
    k = int(np.argmax(vals))
    y = u[k].copy()
    best = vals[k]
    rng = np.random.default_rng(seed)
    yi = unit_directions(n_interior, seed=seed + 1) * rng.uniform(0, 1, n_interior)[:, None] ** 0.25
    interior_best = float(sgn * np.max(obj(yi)))

    step = 0.05
    eps = 1e-7
    for _ in range(polish_steps):
        grad = np.array([(obj(y + eps * e) - obj(y - eps * e)) / (2 * eps) for e in np.eye(4)])
        grad -= y * (grad @ y)
        gn = np.linalg.norm(grad)
        if gn == 0:
            break
        while step > 1e-14:
            cand = y + step * grad / gn
            cand /= np.linalg.norm(cand)
            fc = obj(cand)
            if fc > best:
                y, best = cand, fc
                step *= 1.5
                break
            step *= 0.5
        else:
            break
    x = sq * (Linv_T @ y)
    return OracleResult(x, float(sgn * best), sense, interior_best)
