"""Estimator-style front end for the whole construction."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .domain import solve_phi
from .exceptions import GridExhausted, ModelInvalid
from .family import FamilyConfig, continue_family
from .gauge import build_gauge, singularity_clearance, v_cc
from .growth import default_vcc_grid, tabulate
from .model import CascadeModel, check_oscillatory

log = logging.getLogger(__name__)


def check_model(model):
    """Validate that ``model`` is a :class:`CascadeModel` meeting the standing assumptions."""
    if not isinstance(model, CascadeModel):
        raise TypeError(f"expected a CascadeModel, got {type(model).__name__}")
    rep = check_oscillatory(model)
    if not rep.passed:
        raise ModelInvalid(f"non-oscillatory PLL linearization, eigenvalues {rep.eigenvalues}")
    return model


def check_states(X):
    """Validate an ``(n, 6)`` array of closed-loop states ``(dtheta, domega, x)``."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != 6:
        raise ValueError(f"expected 6 columns (dtheta, domega, x1..x4), got {X.shape[1]}")
    return X


class LockInEstimator(BaseEstimator):
    """Lock-in domain estimate of a cascade model.

    ``fit`` builds the gauge, the limit-cycle family, the growth table and
    the boundary curve. ``transform`` maps states to ``(V_cc, V_pll)`` and
    ``predict`` tests membership in ``V_pll <= Phi(V_cc)``.

    Parameters
    ----------
    margin : float
        Fraction of the spectral abscissa of ``A`` given up in the decay rate.
    eps_margin : float
        Relative clearance from the singular denominator.
    V_seed, V_step_min, V_max : float or None
        Continuation start, minimal step and optional cap (``None``: automatic).
    cycle_tol : float
        Section convergence tolerance in ``dtheta``.
    band_margin : float
        Cycles reaching ``|dtheta| >= pi - band_margin`` end the family.
    max_ratio : float
        Largest ratio between consecutive family levels.
    vcc_levels : int
        Number of log-spaced ``V_cc`` levels of the growth table.
    vcc_lo, vcc_hi : float
        Range of those levels as multiples of ``V_bar``.
    safety_factor : float
        Padding of the growth table.

    Attributes
    ----------
    gauge_, family_, growth_, domain_
        Fitted pipeline stages.
    V_bar_, V_bar_bar_ : float
    """

    def __init__(self, margin=0.5, eps_margin=0.1, V_seed=None, V_step_min=None, V_max=None,
                 cycle_tol=1e-7, band_margin=0.05, max_ratio=1.25, vcc_levels=40, vcc_lo=1e-3,
                 vcc_hi=1e4, safety_factor=1.02):
        self.margin = margin
        self.eps_margin = eps_margin
        self.V_seed = V_seed
        self.V_step_min = V_step_min
        self.V_max = V_max
        self.cycle_tol = cycle_tol
        self.band_margin = band_margin
        self.max_ratio = max_ratio
        self.vcc_levels = vcc_levels
        self.vcc_lo = vcc_lo
        self.vcc_hi = vcc_hi
        self.safety_factor = safety_factor

    def family_config(self):
        return FamilyConfig(V_seed=self.V_seed, V_step_min=self.V_step_min, V_max=self.V_max,
                            cycle_tol=self.cycle_tol, band_margin=self.band_margin,
                            max_ratio=self.max_ratio, eps_margin=self.eps_margin)

    def fit(self, model, y=None, progress=None):
        """Run the construction on ``model``.

        ``progress(V, cycle)`` is called after every accepted family level.
        """
        self.model_ = check_model(model)
        self.gauge_ = build_gauge(model.A, self.margin)
        self.family_ = continue_family(self.gauge_, model, self.family_config(), progress=progress)
        self.V_bar_ = self.family_.V_bar
        self.growth_, self.domain_ = self._extend(model)
        self.V_bar_bar_ = self.domain_.V_bar_bar
        return self

    def _extend(self, model):
        V_safe = singularity_clearance(self.gauge_, model, self.eps_margin)
        hi = self.vcc_hi
        while True:
            top = min(hi, 0.999 * V_safe / self.V_bar_)
            grid = default_vcc_grid(self.V_bar_, self.vcc_levels, self.vcc_lo, top)
            gb = tabulate(self.family_, self.gauge_, model, grid, self.safety_factor)
            try:
                return gb, solve_phi(gb, self.gauge_.gamma, self.V_bar_)
            except GridExhausted:
                if top < hi:
                    raise
                log.info("extending the V_cc grid beyond %.3g V_bar", hi)
                hi *= 10.0

    def transform(self, X):
        """``(V_cc, V_pll)`` per state; ``V_pll = inf`` outside the family."""
        check_is_fitted(self, "domain_")
        X = check_states(X)
        return np.column_stack([v_cc(X[:, 2:], self.gauge_), self.family_.query(X[:, 0], X[:, 1])])

    def decision_function(self, X):
        """``Phi(V_cc) - V_pll``; non-negative exactly on the estimate."""
        L = self.transform(X)
        with np.errstate(invalid="ignore"):
            out = self.domain_.phi_at(L[:, 0]) - L[:, 1]
        return np.where(np.isnan(out), -np.inf, out)

    def predict(self, X):
        """Membership in the lock-in domain estimate."""
        return self.decision_function(X) >= 0
