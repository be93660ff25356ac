"""Closed-form profiles, the cutoff and the linearized operator around Q_mu.

Everything here is a pure function of its arguments and works on scalars or
numpy arrays.  The inner variable is ``rho = r / mu``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "eval_Q",
    "eval_trig_Q",
    "eval_cutoff",
    "eval_kernels_ZZt",
    "linearized_potential",
    "potential_V",
    "apply_linearized_L",
    "build_initial_data",
    "InitialData",
]

# below this rho the tilde-Z closed form is replaced by its leading term
_ZT_SERIES_CUTOFF = 1e-8


def eval_Q(mu, r):
    """Steady profile ``Q_mu(r) = pi - 2 arctan(r/mu)`` and ``dQ/drho``."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise ValueError(f"scale mu must be positive, got {mu}")
    rho = np.asarray(r, dtype=float) / mu
    Q = np.pi - 2.0 * np.arctan(rho)
    dQ = -2.0 / (rho * rho + 1.0)
    return Q, dQ


def eval_trig_Q(rho):
    """Closed forms of ``sin(2 Q)`` and ``cos(2 Q) - 1`` at ``rho``."""
    rho = np.asarray(rho, dtype=float)
    d = (rho * rho + 1.0) ** 2
    return 4.0 * rho * (rho * rho - 1.0) / d, -8.0 * rho * rho / d


def eval_cutoff(x, deriv_order: int = 0):
    """Quintic smoothstep cutoff: 1 on [0, 1], 0 on [2, inf), C^2 in between.

    Parameters
    ----------
    x : float or array
        Non-negative argument.
    deriv_order : {0, 1, 2}
        Which derivative to return.
    """
    if deriv_order not in (0, 1, 2):
        raise ValueError(f"unsupported derivative order {deriv_order}")
    x = np.asarray(x, dtype=float)
    u = np.clip(x - 1.0, 0.0, 1.0)
    inside = (x > 1.0) & (x < 2.0)
    if deriv_order == 0:
        val = 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u * u)
        return val
    if deriv_order == 1:
        val = -30.0 * u * u * (1.0 - u) ** 2
    else:
        val = -60.0 * u * (1.0 - u) * (1.0 - 2.0 * u)
    return np.where(inside, val, 0.0)


def eval_kernels_ZZt(rho):
    """Kernels of the linearized operator and their derivatives.

    Returns ``(Z, Zt, dZ, dZt)`` with ``Z = rho/(rho^2+1)`` and
    ``Zt = (rho^4 + 4 rho^2 ln rho - 1) / (2 rho (rho^2+1))``, normalised so
    that ``Z Zt' - Z' Zt = 1/rho``.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("tilde-Z is singular at rho = 0")
    p2 = rho * rho
    q = p2 + 1.0
    Z = rho / q
    dZ = (1.0 - p2) / (q * q)
    lnr = np.log(rho)
    num = p2 * p2 + 4.0 * p2 * lnr - 1.0
    Zt = num / (2.0 * rho * q)
    # d/drho of num/(2 rho q): num' = 4 rho^3 + 8 rho ln rho + 4 rho
    dnum = 4.0 * rho * p2 + 8.0 * rho * lnr + 4.0 * rho
    den = 2.0 * rho * q
    dden = 2.0 * q + 4.0 * p2
    dZt = (dnum * den - num * dden) / (den * den)
    small = rho < _ZT_SERIES_CUTOFF
    if np.any(small):
        Zt = np.where(small, -0.5 / rho, Zt)
        dZt = np.where(small, 0.5 / (rho * rho), dZt)
    return Z, Zt, dZ, dZt


def linearized_potential(rho):
    """Zeroth-order coefficient ``(rho^4 - 6 rho^2 + 1) / (rho^2 (rho^2+1)^2)``."""
    rho = np.asarray(rho, dtype=float)
    p2 = rho * rho
    return (p2 * p2 - 6.0 * p2 + 1.0) / (p2 * (p2 + 1.0) ** 2)


def potential_V(rho):
    """``V = 8 / (rho^2 + 1)^2``; the potential above equals ``1/rho^2 - V``."""
    rho = np.asarray(rho, dtype=float)
    return 8.0 / (rho * rho + 1.0) ** 2


def _fd_weights_3pt(x):
    """Interior 3-point weights for first and second derivatives on a nonuniform grid."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    s = hm + hp
    d1 = np.stack([-hp / (hm * s), (hp - hm) / (hm * hp), hm / (hp * s)])
    d2 = np.stack([2.0 / (hm * s), -2.0 / (hm * hp), 2.0 / (hp * s)])
    return d1, d2


def apply_linearized_L(rho, phi):
    """Apply ``L = d_rr + (1/rho) d_r - potential`` by finite differences.

    Second-order three-point stencils on the (possibly nonuniform) grid
    ``rho``; the two end nodes have no full stencil and are returned as NaN.
    """
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if rho.size < 3 or rho.shape != phi.shape:
        raise ValueError("need at least 3 matching grid points")
    if np.any(rho <= 0):
        raise ValueError("grid must exclude rho = 0")
    d1, d2 = _fd_weights_3pt(rho)
    f = np.stack([phi[:-2], phi[1:-1], phi[2:]])
    dphi = np.sum(d1 * f, axis=0)
    ddphi = np.sum(d2 * f, axis=0)
    rc = rho[1:-1]
    out = np.full_like(phi, np.nan)
    out[1:-1] = ddphi + dphi / rc - linearized_potential(rc) * phi[1:-1]
    return out


class InitialData:
    """``v0(r) = eta(r/r0) Q_{mu_init}(r) + r <r>^{-gamma}``.

    Callable on arrays.  ``v0(0) = pi`` and ``v0 ~ r^{1-gamma}`` at infinity.
    """

    def __init__(self, gamma: float, mu_init: float, r0: float):
        if gamma <= 1:
            raise ValueError(f"tail exponent must exceed 1, got gamma={gamma}")
        if mu_init <= 0 or r0 <= 0:
            raise ValueError("mu_init and r0 must be positive")
        self.gamma = float(gamma)
        self.mu_init = float(mu_init)
        self.r0 = float(r0)

    def tail(self, r):
        r = np.asarray(r, dtype=float)
        return r * (1.0 + r * r) ** (-0.5 * self.gamma)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        Q, _ = eval_Q(self.mu_init, r)
        return eval_cutoff(r / self.r0) * Q + self.tail(r)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        Q, dQ = eval_Q(self.mu_init, r)
        g = self.gamma
        dtail = (1.0 + r * r) ** (-0.5 * g) - g * r * r * (1.0 + r * r) ** (-0.5 * g - 1.0)
        return (eval_cutoff(r / self.r0, 1) / self.r0 * Q
                + eval_cutoff(r / self.r0) * dQ / self.mu_init + dtail)


def build_initial_data(gamma: float, mu_init: float, r0: float) -> InitialData:
    return InitialData(gamma, mu_init, r0)
