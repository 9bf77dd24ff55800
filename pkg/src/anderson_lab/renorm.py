"""Renormalisation constants from lattice Green's functions.

All lattice Green's functions use the heat-kernel representation

    G_a(x; m) = a^(2-d) * int_0^inf exp(-m a^2 t) prod_j e^{-2t} I_{x_j/a}(2t) dt,

which is the inverse of ``-Delta_a + m`` on the infinite lattice of spacing
``a``.  The one-dimensional ``t`` integral is done with the trapezoid rule in
``s = log t``; the integrand is analytic in the strip ``|Im s| < pi/2`` and
decays (double) exponentially at both ends, so the rule converges
geometrically in the step size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .lattice import MollifierSpec

ORDERS = ("none", "second_order", "plus_fourth_order")

_STEP = 0.1


class QuadratureError(RuntimeError):
    """Raised when a quadrature misses its tolerance; carries the error estimate."""

    def __init__(self, message, value=None, error=None):
        super().__init__(message)
        self.value = value
        self.error = error


def _log_nodes(mu, s_min, step=_STEP):
    s_max = np.log(60.0 / mu) if mu > 0 else 60.0
    s = np.arange(s_min, s_max + step, step)
    t = np.exp(s)
    weights = step * t * np.exp(-mu * t)
    return t, weights


@lru_cache(maxsize=256)
def _unit_green_diagonal(d, mu):
    t, w = _log_nodes(mu, s_min=-42.0)
    return float(np.sum(w * special.ive(0, 2.0 * t) ** d))


def lattice_green_diagonal(d, a, m=1.0):
    """``G_a(0; m)``: diagonal of ``(-Delta_a + m)^{-1}`` on Z^d scaled by ``a``.

    Equals ``(2 pi)^-d int_{[-pi/a, pi/a]^d} dk / (mu_a(k) + m)`` with
    ``mu_a(k) = (2/a^2) sum_j (1 - cos(a k_j))``.
    """
    if d not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2 or 3")
    if not m > 0:
        raise ValueError("mass must be positive")
    if not a > 0:
        raise ValueError("spacing must be positive")
    return a ** (2 - d) * _unit_green_diagonal(d, float(m * a * a))


def lattice_green_function(d, a, m, points):
    """``G_a(x; m)`` at lattice vectors ``x = a * points`` (integer array ``(..., d)``)."""
    if not m > 0:
        raise ValueError("mass must be positive")
    pts = np.abs(np.asarray(points, dtype=int)).reshape(-1, d)
    mu = float(m * a * a)
    t, w = _log_nodes(mu, s_min=-42.0)
    orders = np.unique(pts)
    table = {int(j): special.ive(int(j), 2.0 * t) for j in orders}
    vals = np.empty(len(pts))
    for i, p in enumerate(pts):
        prod = w.copy()
        for j in p:
            prod = prod * table[int(j)]
        vals[i] = prod.sum()
    return a ** (2 - d) * vals.reshape(np.shape(points)[:-1])


@lru_cache(maxsize=64)
def cubic_green_sum(a, m=1.0, radius=None):
    """``a^3 sum_{x != 0} G_a(x; m)^3`` on the three-dimensional lattice.

    The sum runs over the cube ``|n|_inf <= radius`` using octant symmetry; the
    remainder is closed with the continuum tail ``E1(3 kappa R) / (16 pi^2)``,
    ``kappa`` being the lattice decay rate.
    """
    mu = float(m * a * a)
    kappa = float(np.arccosh(1.0 + mu / 2.0))
    if radius is None:
        radius = int(min(max(np.ceil(3.5 / kappa), 16), 640))
    t, w = _log_nodes(mu, s_min=-20.0, step=0.15)
    F = special.ive(np.arange(radius + 1)[:, None], 2.0 * t[None, :])
    mult = np.where(np.arange(radius + 1) == 0, 1.0, 2.0)
    mult2 = mult[:, None] * mult[None, :]
    total = 0.0
    for n1 in range(radius + 1):
        g = (F * (w * F[n1])) @ F.T
        cube = g**3 * mult2 * mult[n1]
        if n1 == 0:
            cube[0, 0] = 0.0
        total += cube.sum()
    tail = special.exp1(3.0 * kappa * radius) / (16.0 * np.pi**2)
    # G_a = g / a in d=3, so a^3 * sum G^3 = sum g^3
    return float(total + tail)


@dataclass(frozen=True)
class RenormConstant:
    """Additive constant ``C`` in ``-Delta + V + C``; ``value >= 0``."""

    d: int
    a: float
    m: float
    beta: float
    value: float
    order: str

    def to_dict(self):
        return {"d": self.d, "a": self.a, "m": self.m, "beta": self.beta,
                "order": self.order, "value": self.value}


def renorm_constant(d, a, m=1.0, beta=1.0, order=None):
    """Lattice renormalisation constant for noise ``beta * xi`` at spacing ``a``.

    d=1: 0.  d=2: ``beta^2 G_a(0; m)``.  d=3: ``beta^2 G_a(0; m)`` and, with
    ``order="plus_fourth_order"``, an extra ``beta^4 a^3 sum_{x!=0} G_a(x; m)^3``.
    """
    if order is None:
        order = "none" if d == 1 else "second_order"
    if order not in ORDERS:
        raise ValueError(f"unknown order {order!r}")
    if d == 1:
        if order != "none":
            raise ValueError("d=1 needs no renormalisation (order must be 'none')")
        return RenormConstant(1, float(a), float(m), float(beta), 0.0, "none")
    if order == "none":
        raise ValueError(f"d={d} requires at least second_order renormalisation")
    if order == "plus_fourth_order" and d != 3:
        raise ValueError("plus_fourth_order is only defined for d=3")
    value = beta**2 * lattice_green_diagonal(d, a, m)
    if order == "plus_fourth_order":
        value += beta**4 * cubic_green_sum(float(a), float(m))
    return RenormConstant(d, float(a), float(m), float(beta), float(value), order)


def zero_renorm(d, a):
    return RenormConstant(d, float(a), 1.0, 0.0, 0.0, "none")


# --- continuum constants (d = 3) --------------------------------------------


def _quad(f, lo, hi, tol=1e-11):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=tol, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{lo}, {hi}] did not converge: {exc}") from exc
    if not np.isfinite(val) or err > 1e3 * tol * max(abs(val), 1e-300):
        raise QuadratureError(f"quadrature error estimate {err:.3e} for value {val:.6e}",
                              value=val, error=err)
    return val


def continuum_c_rho(moll: MollifierSpec, d=3):
    """``int_{R^3} G(y) (rho_eps * rho_eps)(y) dy`` with ``G = 1/(4 pi |y|)``.

    Computed as the Coulomb self-energy of the radial density ``rho_eps``:
    ``4 pi int rho(r) Phi(r) r^2 dr`` where ``Phi`` is its potential.  At
    ``eps = 1`` this is ``c_rho``; in general it equals ``c_rho / eps``.
    """
    if d != 3:
        raise ValueError("continuum_c_rho is defined for d=3")
    m3 = MollifierSpec(moll.eps, 3)
    eps = m3.eps

    def rho(r):
        return float(m3(np.array([[r, 0.0, 0.0]]))[0])

    def potential(r):
        inner = _quad(lambda s: rho(s) * s * s, 0.0, r) / r if r > 0 else 0.0
        outer = _quad(lambda s: rho(s) * s, r, eps) if r < eps else 0.0
        return inner + outer

    return 4.0 * np.pi * _quad(lambda r: rho(r) * potential(r) * r * r, 0.0, eps, tol=1e-9)


def continuum_c_rho_tilde(moll: MollifierSpec, d=3):
    """``-int G(y) |y| (rho*rho)(y) dy``; since ``G(y)|y| = 1/(4 pi)`` this is ``-mass^2 / (4 pi)``."""
    if d != 3:
        raise ValueError("continuum_c_rho_tilde is defined for d=3")
    m3 = MollifierSpec(moll.eps, 3)
    mass = 4.0 * np.pi * _quad(lambda r: float(m3(np.array([[r, 0.0, 0.0]]))[0]) * r * r, 0.0, m3.eps)
    return -mass**2 / (4.0 * np.pi)
