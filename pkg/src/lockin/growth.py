"""Growth bound ``F`` with ``dV_pll/dt <= F(V_pll, V_cc)``.

For a level curve of ``V_pll`` with gradient ``(g1, g2)`` the PLL velocity
gives::

    grad . (-k_p f + domega, -k_i f) = g1 domega + c f,   c = -(k_p g1 + k_i g2)

which is affine in ``f``. Its maximum over the ellipsoid ``V_cc(x) <= v``
is therefore attained where ``f`` is extremal: the maximum of ``f`` when
``c > 0`` and the minimum when ``c < 0``. The attainable range of ``f``
has a closed form (see :func:`lockin.extremal.f_range`), so the inner
maximization needs no optimizer.

Interpolation in ``V_cc`` is linear in ``sqrt(V_cc)``: the half-width of
the range of ``f`` grows like ``sqrt(V_cc)``, so a maximum of such terms is
convex in that coordinate and the chord lies above it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import OutOfRange
from .extremal import f_range

DEFAULT_SAFETY = 1.02


def default_vcc_grid(V_bar, n_levels=40, lo=1e-3, hi=1e4):
    """``0`` followed by ``n_levels`` log-spaced levels in ``[lo V_bar, hi V_bar]``."""
    return np.concatenate([[0.0], np.geomspace(lo * V_bar, hi * V_bar, n_levels)])


@dataclass(frozen=True)
class GrowthBound:
    """Tabulated growth bound on the grid ``vpll_grid x vcc_grid``.

    Attributes
    ----------
    vpll_grid : ndarray
        Family levels, starting at ``0``.
    vcc_grid : ndarray
        Increasing ``V_cc`` levels starting at ``0``.
    raw : ndarray
        Sampled maxima, shape ``(len(vpll_grid), len(vcc_grid))``.
    safety_factor : float
        Padding applied as ``F + (s - 1) |F|``.
    vcc_scale : {'sqrt', 'linear'}
        Coordinate in which interpolation along ``V_cc`` is linear.
    """

    vpll_grid: np.ndarray
    vcc_grid: np.ndarray
    raw: np.ndarray
    safety_factor: float = DEFAULT_SAFETY
    vcc_scale: str = "sqrt"

    @property
    def values(self):
        return self.raw + (self.safety_factor - 1.0) * np.abs(self.raw)

    @property
    def V_bar(self):
        return float(self.vpll_grid[-1])

    def _vcc_coord(self, v):
        return np.sqrt(v) if self.vcc_scale == "sqrt" else v

    def __call__(self, vpll, vcc):
        return eval_F(vpll, vcc, self)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("vpll", "vcc", "F"))
            vals = self.values
            for i, vp in enumerate(self.vpll_grid):
                for j, vc in enumerate(self.vcc_grid):
                    w.writerow([format(float(x), ".17g") for x in (vp, vc, vals[i, j])])

    @classmethod
    def from_csv(cls, path, safety_factor=DEFAULT_SAFETY, vcc_scale="sqrt"):
        """Reload an exported table; the stored values are already padded."""
        d = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
        vp = np.unique(d["vpll"])
        vc = np.unique(d["vcc"])
        vals = d["F"].reshape(len(vp), len(vc))
        return cls(vp, vc, vals, safety_factor=1.0, vcc_scale=vcc_scale)


def cycle_growth(cycle, vcc, gauge, model):
    """Maximum of ``grad . velocity`` over the cycle samples for each ``vcc`` level."""
    vcc = np.atleast_1d(np.asarray(vcc, dtype=float))
    if cycle.V == 0:
        return np.zeros(len(vcc))
    th, w = cycle.dtheta, cycle.domega
    g1, g2 = cycle.grad[:, 0], cycle.grad[:, 1]
    c = -(model.k_p * g1 + model.k_i * g2)
    lo, hi = f_range(th[None, :], w[None, :], vcc[:, None], gauge, model)
    f_ext = np.where(c[None, :] > 0, hi, lo)
    return np.max(g1[None, :] * w[None, :] + c[None, :] * f_ext, axis=1)


def tabulate(fam, gauge, model, vcc_grid, safety_factor=DEFAULT_SAFETY, vcc_scale="sqrt"):
    """Tabulate ``F`` on every family level and ``vcc_grid`` level.

    Parameters
    ----------
    fam : CycleFamily
        Family with gradients attached.
    vcc_grid : array_like
        Increasing levels starting at ``0``.
    """
    vcc_grid = np.asarray(vcc_grid, dtype=float)
    if vcc_grid[0] != 0 or np.any(np.diff(vcc_grid) <= 0):
        raise ValueError("vcc_grid must start at 0 and increase strictly")
    rows = [cycle_growth(c, vcc_grid, gauge, model) for c in fam.cycles]
    return GrowthBound(fam.levels.copy(), vcc_grid, np.array(rows), safety_factor, vcc_scale)


def eval_F(vpll, vcc, gb):
    """Interpolated (padded) growth bound.

    Inside the innermost cell ``[0, V_1)`` the ``V_1`` row is used: the
    origin row vanishes only because the gradient does, and a bound
    shrinking to zero with ``V_pll`` would keep ``Phi`` from ever reaching
    zero.

    Raises
    ------
    OutOfRange
        ``vpll`` outside ``[0, V_bar]``.
    """
    vpll = np.asarray(vpll, dtype=float)
    vcc = np.asarray(vcc, dtype=float)
    lv = gb.vpll_grid
    if np.any(vpll < 0) or np.any(vpll > lv[-1] * (1 + 1e-12)) or np.any(np.isnan(vpll)):
        raise OutOfRange(f"vpll outside [0, {lv[-1]:.6g}]")
    vals = gb.values
    sc = gb._vcc_coord(gb.vcc_grid)
    s = gb._vcc_coord(np.clip(vcc, gb.vcc_grid[0], gb.vcc_grid[-1]))
    j = np.clip(np.searchsorted(sc, s, side="right") - 1, 0, len(sc) - 2)
    u = (s - sc[j]) / (sc[j + 1] - sc[j])
    vp = np.minimum(vpll, lv[-1])
    i = np.clip(np.searchsorted(lv, vp, side="right") - 1, 0, len(lv) - 2)
    r = (vp - lv[i]) / (lv[i + 1] - lv[i])
    inner = i == 0
    r = np.where(inner, 1.0, r)
    out = ((1 - r) * ((1 - u) * vals[i, j] + u * vals[i, j + 1])
           + r * ((1 - u) * vals[i + 1, j] + u * vals[i + 1, j + 1]))
    return float(out) if out.ndim == 0 else out
