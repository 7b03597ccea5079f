"""Cascade system: a linear current controller feeding a planar PLL.

State layout used throughout the package::

    (dtheta, domega, x1, x2, x3, x4)

with the PLL dynamics

    dtheta' = -k_p f(dtheta, domega, x) + domega
    domega' = -k_i f(dtheta, domega, x)
    f = (g(dtheta, domega) - h(domega)^T x) / (mu - nu^T x)

and the current controller ``x' = A x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .exceptions import ModelInvalid, NotHurwitz, SingularDenominator

#: Relative floor on ``|mu - nu^T x|`` below which f is treated as singular.
SINGULAR_FLOOR = 1e-9


class PllState(NamedTuple):
    dtheta: float
    domega: float


class CascadeModel:
    """Pluggable cascade model.

    Subclasses implement :meth:`g`, :meth:`g_partials`, :meth:`h` and
    :meth:`h_prime`; the constant data ``A, k_p, k_i, mu, nu`` is passed to
    this constructor which validates the structural requirements.

    All function evaluations broadcast over leading array dimensions:
    ``g`` returns shape ``S`` for inputs of shape ``S`` and ``h`` returns
    ``S + (4,)``.
    """

    name = "cascade"

    def __init__(self, A, k_p, k_i, mu, nu):
        A = np.array(A, dtype=float)
        nu = np.array(nu, dtype=float)
        if A.shape != (4, 4) or nu.shape != (4,):
            raise ModelInvalid("A must be 4x4 and nu a 4-vector")
        if not (k_p > 0 and k_i > 0):
            raise ModelInvalid("PLL gains k_p, k_i must be positive")
        if mu == 0:
            raise ModelInvalid("mu must be nonzero")
        eig = np.linalg.eigvals(A)
        if np.max(eig.real) >= 0:
            raise NotHurwitz(
                f"A is not Hurwitz: spectral abscissa {np.max(eig.real):.6g}"
            )
        A.setflags(write=False)
        nu.setflags(write=False)
        self.A = A
        self.k_p = float(k_p)
        self.k_i = float(k_i)
        self.mu = float(mu)
        self.nu = nu
        g0 = float(self.g(0.0, 0.0))
        if g0 != 0.0:
            raise ModelInvalid(f"g(0, 0) must vanish, got {g0!r}")

    # -- plug-in surface -------------------------------------------------
    def g(self, dtheta, domega):
        raise NotImplementedError

    def g_partials(self, dtheta, domega):
        """Return ``(g_dtheta, g_domega)``."""
        raise NotImplementedError

    def h(self, domega):
        raise NotImplementedError

    def h_prime(self, domega):
        raise NotImplementedError

    def typical_scales(self):
        """Magnitudes of ``(dtheta, domega, x)`` used to draw test points."""
        return 1.0, 1.0, np.ones(4)

    # -- derived quantities ---------------------------------------------
    def b(self, dtheta, domega):
        """``mu h(domega) - g(dtheta, domega) nu``."""
        g = np.asarray(self.g(dtheta, domega))
        return self.mu * self.h(domega) - g[..., None] * self.nu

    def b_partials(self, dtheta, domega):
        g_t, g_w = self.g_partials(dtheta, domega)
        g_t = np.asarray(g_t)[..., None]
        g_w = np.asarray(g_w)[..., None]
        b_t = -g_t * self.nu
        b_w = self.mu * self.h_prime(domega) - g_w * self.nu
        return b_t, b_w

    def H(self, domega):
        """Skew matrix ``h nu^T - nu h^T``."""
        h = self.h(domega)
        hn = h[..., :, None] * self.nu[None, :]
        return hn - np.swapaxes(hn, -1, -2)

    def H_prime(self, domega):
        hp = self.h_prime(domega)
        hn = hp[..., :, None] * self.nu[None, :]
        return hn - np.swapaxes(hn, -1, -2)

    def denominator(self, x):
        x = np.asarray(x, dtype=float)
        den = self.mu - x @ self.nu
        if np.any(np.abs(den) < SINGULAR_FLOOR * abs(self.mu)):
            raise SingularDenominator("mu - nu^T x is numerically zero")
        return den

    @cached_property
    def grad_sign(self):
        """Sign of ``b`` in ``grad_x f = (sign*b + Hx)/(mu - nu^T x)^2``.

        Resolved once per model by a central finite-difference gate.
        """
        return gradient_sign_gate(self)

    def __repr__(self):
        return f"{type(self).__name__}(k_p={self.k_p:g}, k_i={self.k_i:g}, mu={self.mu:g})"


# -- evaluations ----------------------------------------------------------

def eval_f(dtheta, domega, x, model):
    """PLL forcing ``f = (g - h^T x) / (mu - nu^T x)``."""
    x = np.asarray(x, dtype=float)
    den = model.denominator(x)
    num = model.g(dtheta, domega) - np.sum(model.h(domega) * x, axis=-1)
    return num / den


def gradient_candidate(dtheta, domega, x, model, sign):
    x = np.asarray(x, dtype=float)
    den = model.denominator(x)
    Hx = np.einsum("...ij,...j->...i", model.H(domega), x)
    return (sign * model.b(dtheta, domega) + Hx) / (den**2)[..., None]


def eval_f_partials(dtheta, domega, x, model):
    """Partial derivatives of f.

    Returns
    -------
    f_dtheta, f_domega : ndarray
    grad_x : ndarray, shape (..., 4)
    """
    x = np.asarray(x, dtype=float)
    den = model.denominator(x)
    g_t, g_w = model.g_partials(dtheta, domega)
    f_t = g_t / den
    f_w = (g_w - np.sum(model.h_prime(domega) * x, axis=-1)) / den
    grad = gradient_candidate(dtheta, domega, x, model, model.grad_sign)
    return f_t, f_w, grad


def eval_rhs_full(dtheta, domega, x, model):
    """Right-hand side of the six-dimensional closed loop."""
    x = np.asarray(x, dtype=float)
    f = eval_f(dtheta, domega, x, model)
    out = np.empty(np.shape(f) + (6,))
    out[..., 0] = -model.k_p * f + domega
    out[..., 1] = -model.k_i * f
    out[..., 2:] = x @ model.A.T
    return out


def full_rhs(state, model):
    """Same as :func:`eval_rhs_full` on packed states of shape ``(..., 6)``."""
    state = np.asarray(state, dtype=float)
    return eval_rhs_full(state[..., 0], state[..., 1], state[..., 2:], model)


def gradient_sign_gate(model, n=1000, rtol=1e-6, seed=0):
    """Pick the sign of ``b`` in the gradient formula by finite differences.

    Both candidate signs are tested at ``n`` random admissible points
    against central differences of :func:`eval_f`; the candidate matching
    everywhere within ``rtol`` (norm-wise) wins.

    Raises
    ------
    ModelInvalid
        If neither candidate matches.
    """
    rng = np.random.default_rng(seed)
    th_s, w_s, x_s = model.typical_scales()
    th = rng.uniform(-np.pi, np.pi, n)
    w = rng.uniform(-1, 1, n) * w_s
    x = rng.uniform(-1, 1, (n, 4)) * x_s
    # keep clear of the singular hyperplane
    x = x * np.minimum(1.0, 0.5 * abs(model.mu) / np.maximum(np.abs(x @ model.nu), 1e-300))[:, None]
    fd = finite_difference_grad(th, w, x, model)
    scale = np.linalg.norm(fd, axis=1)
    for sign in (1.0, -1.0):
        cand = gradient_candidate(th, w, x, model, sign)
        err = np.linalg.norm(cand - fd, axis=1) / np.maximum(scale, 1e-300)
        if np.all(err <= rtol):
            return sign
    raise ModelInvalid("neither gradient sign matches finite differences of f")


def finite_difference_grad(dtheta, domega, x, model, rel_step=1e-6):
    """Central differences of :func:`eval_f` with respect to ``x``."""
    x = np.asarray(x, dtype=float)
    grad = np.empty(x.shape)
    for j in range(4):
        step = rel_step * (1.0 + np.abs(x[..., j]))
        xp = x.copy()
        xm = x.copy()
        xp[..., j] += step
        xm[..., j] -= step
        grad[..., j] = (eval_f(dtheta, domega, xp, model) - eval_f(dtheta, domega, xm, model)) / (2 * step)
    return grad


def pll_jacobian(model):
    """Jacobian of the PLL subsystem at the origin with ``x = 0``."""
    f_t, f_w, _ = eval_f_partials(0.0, 0.0, np.zeros(4), model)
    return np.array(
        [[-model.k_p * f_t, 1.0 - model.k_p * f_w], [-model.k_i * f_t, 0.0]]
    )


@dataclass(frozen=True)
class OscillationReport:
    eigenvalues: np.ndarray
    passed: bool


def oscillation_report(J):
    eig = np.linalg.eigvals(np.asarray(J, dtype=float))
    passed = bool(np.all(np.abs(eig.imag) > 0) and np.all(eig.real < 0))
    return OscillationReport(eigenvalues=eig, passed=passed)


def check_oscillatory(model):
    """Eigenvalues of the PLL Jacobian must be non-real with negative real parts."""
    return oscillation_report(pll_jacobian(model))


# -- default DC/AC inverter ----------------------------------------------

@dataclass(frozen=True)
class InverterParams:
    """Physical parameters of the grid-following inverter (SI units)."""

    k_p: float = 3e-4
    k_i: float = 1e-4
    kappa_p: float = 1e-2
    kappa_i: float = 1.0
    L_f: float = 1e-3
    R_f: float = 4e-4
    i_dq_ref: tuple = (10.0, 0.0)
    omega_g: float = 100 * np.pi
    L_g: float = 2e-3
    R_g: float = 6e-4
    v_g_norm: float = 325.0

    @classmethod
    def preset(cls, name):
        try:
            return PRESETS[name]
        except KeyError:
            raise ModelInvalid(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None

    def validate(self):
        positive = ("k_p", "k_i", "kappa_p", "kappa_i", "L_f", "R_f", "omega_g", "L_g", "R_g", "v_g_norm")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ModelInvalid(f"{name} must be positive")
        if len(self.i_dq_ref) != 2:
            raise ModelInvalid("i_dq_ref must have two entries")


PRESETS = {
    "version-I": InverterParams(k_p=3e-4, k_i=1e-4),
    "version-II": InverterParams(k_p=3e-3, k_i=1e-2),
}


class InverterModel(CascadeModel):
    """SRF-PLL + dq-frame PI current control behind an RL grid connection.

    Derivation (complex dq notation in the PLL frame, ``j`` rotates by 90°):

    * Filter: ``L_f (i' + j theta' i) = v_c - R_f i - v_pcc``.
    * Controller: ``v_c = v_pcc + j theta' L_f i + kappa_p (i_r - i) + z``,
      ``z' = kappa_i (i_r - i)`` (PCC-voltage feedforward and decoupling).
      Hence ``L_f i' = -(R_f + kappa_p)(i - i_r) + (z - R_f i_r)`` and with
      ``e = i - i_r``, ``w = z - R_f i_r`` the CC state is
      ``x = (e_d, e_q, w_d, w_q)`` with ``x' = A x``.
    * PCC voltage seen by the PLL:
      ``v_pcc = |v_g| exp(-j(delta0 + dtheta)) + R_g i + L_g (i' + j theta' i)``.
    * PLL: ``dtheta' = domega + k_p v_q``, ``domega' = k_i v_q`` so
      ``f = -v_q``. Because ``theta' = omega_g + domega - k_p f`` appears
      inside ``v_q`` the loop is algebraic; solving it for ``f`` produces
      the denominator ``mu - nu^T x`` with ``mu = 1 - k_p L_g i_rd`` and
      ``nu = (k_p L_g, 0, 0, 0)``.
    * ``delta0`` is the equilibrium angle offset with
      ``|v_g| sin(delta0) = R_g i_rq + L_g omega_g i_rd``; measuring
      ``dtheta`` from it makes ``g(0, 0) = 0``.

    The resulting pieces are::

        g(dtheta, domega) = |v_g| (sin(delta0 + dtheta) - sin(delta0)) - L_g i_rd domega
        h(domega) = (L_g (omega_g + domega), R_g - L_g a, 0, L_g / L_f)
        a = (R_f + kappa_p) / L_f
    """

    name = "inverter"

    def __init__(self, params: InverterParams):
        params.validate()
        self.params = params
        p = params
        self.i_rd, self.i_rq = map(float, p.i_dq_ref)
        s0 = (p.R_g * self.i_rq + p.L_g * p.omega_g * self.i_rd) / p.v_g_norm
        if abs(s0) >= 1:
            raise ModelInvalid("no synchronous equilibrium: grid drop exceeds grid voltage")
        self.delta0 = float(np.arcsin(s0))
        self.a = (p.R_f + p.kappa_p) / p.L_f
        A = np.zeros((4, 4))
        A[0, 0] = A[1, 1] = -self.a
        A[0, 2] = A[1, 3] = 1.0 / p.L_f
        A[2, 0] = A[3, 1] = -p.kappa_i
        mu = 1.0 - p.k_p * p.L_g * self.i_rd
        nu = np.array([p.k_p * p.L_g, 0.0, 0.0, 0.0])
        super().__init__(A, p.k_p, p.k_i, mu, nu)

    def g(self, dtheta, domega):
        p = self.params
        return (
            p.v_g_norm * (np.sin(self.delta0 + dtheta) - np.sin(self.delta0))
            - p.L_g * self.i_rd * np.asarray(domega, dtype=float)
        )

    def g_partials(self, dtheta, domega):
        p = self.params
        g_t = p.v_g_norm * np.cos(self.delta0 + np.asarray(dtheta, dtype=float))
        g_w = np.full(np.shape(domega), -p.L_g * self.i_rd)
        g_t, g_w = np.broadcast_arrays(g_t, g_w)
        return g_t, g_w

    def h(self, domega):
        p = self.params
        domega = np.asarray(domega, dtype=float)
        out = np.empty(domega.shape + (4,))
        out[..., 0] = p.L_g * (p.omega_g + domega)
        out[..., 1] = p.R_g - p.L_g * self.a
        out[..., 2] = 0.0
        out[..., 3] = p.L_g / p.L_f
        return out

    def h_prime(self, domega):
        p = self.params
        out = np.zeros(np.shape(domega) + (4,))
        out[..., 0] = p.L_g
        return out

    def typical_scales(self):
        p = self.params
        w_scale = np.sqrt(p.k_i * p.v_g_norm)
        i_scale = max(abs(self.i_rd), abs(self.i_rq), 1.0)
        return 1.0, w_scale, np.array([i_scale, i_scale, p.R_f * i_scale + 1.0, p.R_f * i_scale + 1.0])


def default_inverter_model(params: InverterParams | str = "version-I") -> InverterModel:
    """Build the default inverter model from parameters or a preset name."""
    if isinstance(params, str):
        params = InverterParams.preset(params)
    return InverterModel(params)


class SinusoidalModel(CascadeModel):
    """Generic test model with ``g = amp sin(dtheta) + damp domega`` and affine ``h``.

    Handy for plugging arbitrary ``A`` matrices into the pipeline.
    """

    name = "sinusoidal"

    def __init__(self, A, k_p, k_i, mu=1.0, nu=(0, 0, 0, 0), amp=1.0, damp=0.0,
                 h0=(0, 0, 0, 0), h1=(0, 0, 0, 0)):
        self.amp = float(amp)
        self.damp = float(damp)
        self.h0 = np.asarray(h0, dtype=float)
        self.h1 = np.asarray(h1, dtype=float)
        super().__init__(A, k_p, k_i, mu, nu)

    def g(self, dtheta, domega):
        return self.amp * np.sin(dtheta) + self.damp * np.asarray(domega, dtype=float)

    def g_partials(self, dtheta, domega):
        g_t = self.amp * np.cos(np.asarray(dtheta, dtype=float))
        g_w = np.full(np.shape(domega), self.damp)
        return np.broadcast_arrays(g_t, g_w)

    def h(self, domega):
        domega = np.asarray(domega, dtype=float)
        return self.h0 + domega[..., None] * self.h1

    def h_prime(self, domega):
        return np.broadcast_to(self.h1, np.shape(domega) + (4,)).copy()

    def typical_scales(self):
        return 1.0, 1.0, np.ones(4)
