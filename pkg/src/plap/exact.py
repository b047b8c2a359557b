"""Closed-form reference objects: pole solutions, Barenblatt profile, exponents.

``fundamental_solution`` evaluates the textbook display ``|x|^{(p-n)/(p-1)}``
(``log|x|`` for p = n) as is.  For p >= n that display is subharmonic near the
pole (it has an interior minimum there); the representative with nonnegative
Riesz mass is its negative, provided by ``superharmonic_fundamental`` and used
by every measure-extraction experiment.  ``riesz_flux_constant`` gives the
mass of that representative's Dirac, derived from the radial flux
``|u'|^{p-2} u' r^{n-1} omega_{n-1}``, which is constant in r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .grids import PParams

__all__ = [
    "CriticalExponents",
    "fundamental_solution",
    "superharmonic_fundamental",
    "riesz_flux_constant",
    "barenblatt",
    "barenblatt_normalize",
    "support_radius",
    "exponent_bounds",
    "RootNotBracketed",
]

_SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}  # omega_{n-1}


class RootNotBracketed(RuntimeError):
    pass


@dataclass(frozen=True)
class CriticalExponents:
    """Strict (exclusive) upper integrability bounds for u and |grad u|."""

    r_elliptic: float
    q_elliptic: float
    r_parabolic: float
    q_parabolic: float


def _radius(x, n: int) -> np.ndarray:
    """|x| for point arrays carrying n components on the last axis; bare
    scalars/arrays are accepted as coordinates when n = 1."""
    x = np.asarray(x, dtype=float)
    if n == 1:
        if x.ndim >= 1 and x.shape[-1] == 1:
            return np.abs(x[..., 0])
        return np.abs(x)
    if x.ndim == 0 or x.shape[-1] != n:
        raise ValueError(f"points must carry {n} components on the last axis")
    return np.sqrt(np.sum(x * x, axis=-1))


def fundamental_solution(x, n: int, P: PParams):
    """``|x|^{(p-n)/(p-1)}`` for p != n, ``log|x|`` for p = n; pole rejected."""
    r = _radius(x, n)
    if np.any(r == 0.0):
        raise ValueError("fundamental solution has a pole at x = 0")
    if P.p == n:
        return np.log(r)
    return r ** ((P.p - n) / (P.p - 1.0))


def superharmonic_fundamental(x, n: int, P: PParams):
    """The p-superharmonic pole solution: the display itself for p < n, its
    negative for p >= n (peak at the pole, comparison principle holds)."""
    val = fundamental_solution(x, n, P)
    return val if P.p < n else -val


def riesz_flux_constant(n: int, P: PParams) -> float:
    """Total Riesz mass of ``superharmonic_fundamental``: the constant value
    of ``-|u'|^{p-2} u' r^{n-1} omega_{n-1}`` along any sphere around the pole."""
    p = P.p
    if p == n:
        return _SPHERE_AREA[n]  # |u'| = 1/r, sign flipped by the -log branch
    beta = abs((p - n) / (p - 1.0))
    return beta ** (p - 1.0) * _SPHERE_AREA[n]


def _barenblatt_lambda(n: int, p: float) -> float:
    return n * (p - 2.0) + p


def barenblatt(x, t, n: int, P: PParams, c: float):
    """Self-similar source solution; identically 0 for t <= 0."""
    if c <= 0:
        raise ValueError("profile constant c must be positive")
    p = P.p
    lam = _barenblatt_lambda(n, p)
    r = _radius(x, n)
    t = np.asarray(t, dtype=float)
    tpos = np.maximum(t, np.finfo(float).tiny)
    xi = r / tpos ** (1.0 / lam)
    core = c - (p - 2.0) / p * lam ** (1.0 / (1.0 - p)) * xi ** (p / (p - 1.0))
    vals = tpos ** (-n / lam) * np.maximum(core, 0.0) ** ((p - 1.0) / (p - 2.0))
    out = np.where(t > 0.0, vals, 0.0)
    return out if out.ndim else float(out)


def support_radius(t: float, n: int, P: PParams, c: float) -> float:
    """Radius where the positive part vanishes: zero of the profile core."""
    if t <= 0:
        raise ValueError("support radius defined for t > 0 only")
    p = P.p
    lam = _barenblatt_lambda(n, p)
    return float(t ** (1.0 / lam) * (c * p * lam ** (1.0 / (p - 1.0)) / (p - 2.0)) ** ((p - 1.0) / p))


def _mass_at_unit_time(n: int, P: PParams, c: float, quad_tol: float) -> float:
    R = support_radius(1.0, n, P, c)
    prof = lambda r: barenblatt(np.array([r] + [0.0] * (n - 1)), 1.0, n, P, c) * r ** (n - 1)
    val, _ = quad(prof, 0.0, R, epsabs=quad_tol * 1e-2, epsrel=quad_tol * 1e-2, limit=200)
    return _SPHERE_AREA[n] * val


def barenblatt_normalize(n: int, P: PParams, quad_tol: float = 1e-8) -> float:
    """Profile constant c making the total mass 1 at t = 1 (hence at all t > 0
    by self-similarity), via bracketed root finding on adaptive quadrature."""
    if n not in (1, 2, 3):
        raise ValueError("n must be 1, 2 or 3")
    mass = lambda c: _mass_at_unit_time(n, P, c, quad_tol) - 1.0
    lo, hi = 1e-6, 1.0
    for _ in range(80):
        if mass(hi) > 0:
            break
        hi *= 2.0
    else:
        raise RootNotBracketed("mass never exceeds 1 on the search interval")
    if mass(lo) > 0:
        raise RootNotBracketed("mass already exceeds 1 at the lower bracket")
    return float(brentq(mass, lo, hi, xtol=1e-14, rtol=8.9e-16))


def exponent_bounds(n: int, P: PParams) -> CriticalExponents:
    """The critical integrability exponents; elliptic r degenerates to +inf
    for p >= n (the pole solution is bounded there), elliptic q to +inf in
    dimension one."""
    if n < 1:
        raise ValueError("n must be at least 1")
    p = P.p
    r_ell = n * (p - 1.0) / (n - p) if p < n else math.inf
    q_ell = n * (p - 1.0) / (n - 1.0) if n > 1 else math.inf
    return CriticalExponents(
        r_elliptic=r_ell,
        q_elliptic=q_ell,
        r_parabolic=p - 1.0 + p / n,
        q_parabolic=p - 1.0 + 1.0 / (n + 1.0),
    )
