"""Partition of unity on cubes of side ``r`` and the two-sided sub-box eigenvalue check.

With ``phi(x) = c int_{-1}^x exp(-1/(1-u^2)) du`` and

    zeta(x) = sqrt(phi(2 + 4x/r) * phi(2 - 4x/r)),   eta_k(x) = prod_j zeta(x_j - r k_j),

the squares ``eta_k^2`` sum to one.  The localisation error then gives

    min_big lambda_1 - K/r^2  <=  lambda_1(Q_L)  <=  min_small lambda_1

with ``K = r^2 sup_x sum_k |grad eta_k|^2(x)``, which does not depend on ``r``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache, partial

import numpy as np
from scipy import integrate, sparse
from scipy.sparse.linalg import eigsh

from .eigensolver import DEFAULT_TOL, principal_eigenvalue
from .hamiltonian import assemble
from .lattice import restrict_field, sub_grid
from .parallel import ordered_map

log = logging.getLogger(__name__)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(80)


def _density(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def bump_constant():
    """``c = 1 / int_{-1}^{1} exp(-1/(1-u^2)) du``."""
    total, _ = integrate.quad(lambda u: np.exp(-1.0 / (1.0 - u * u)), -1.0, 1.0,
                              epsabs=0.0, epsrel=1e-13, limit=200)
    return 1.0 / total


def _phi_left(x):
    """``phi`` on ``x <= 0`` by Gauss-Legendre on ``[-1, x]``."""
    x = np.asarray(x, dtype=float)
    lo = -1.0
    half = 0.5 * (x - lo)
    u = lo + half[..., None] * (_GL_NODES + 1.0)
    return bump_constant() * half * (_density(u) @ _GL_WEIGHTS)


def bump_phi(x):
    """Smooth step: 0 for ``x <= -1``, 1 for ``x >= 1``, ``phi(x) + phi(-x) = 1``.

    Values for ``x > 0`` are taken as ``1 - phi(-x)`` so the symmetry holds to
    rounding.
    """
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, -1.0, 1.0)
    out = np.where(xc <= 0.0, _phi_left(np.minimum(xc, 0.0)), 1.0 - _phi_left(-np.maximum(xc, 0.0)))
    return out if out.ndim else float(out)


def bump_phi_prime(x):
    return bump_constant() * _density(x)


@dataclass(frozen=True)
class PartitionSpec:
    d: int
    r: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if not self.r >= 1.0:
            raise ValueError("sub-box scale r must be at least 1")

    @property
    def bump_c(self):
        return bump_constant()

    def zeta(self, x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(bump_phi(2.0 + 4.0 * x / self.r) * bump_phi(2.0 - 4.0 * x / self.r))

    def zeta_prime(self, x):
        """Analytic derivative of ``zeta``; set to 0 where ``zeta`` vanishes."""
        x = np.asarray(x, dtype=float)
        A = 2.0 + 4.0 * x / self.r
        B = 2.0 - 4.0 * x / self.r
        pa, pb = np.asarray(bump_phi(A)), np.asarray(bump_phi(B))
        da, db = bump_phi_prime(A), bump_phi_prime(B)
        out = np.zeros_like(x)
        ok = (pa > 1e-300) & (pb > 1e-300)
        sa, sb = np.sqrt(pa[ok]), np.sqrt(pb[ok])
        out[ok] = (4.0 / self.r) * (0.5 * da[ok] / sa * sb - sa * 0.5 * db[ok] / sb)
        return out

    def eta(self, k, x):
        """``eta_k(x)`` and its gradient for points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        y = x - self.r * np.asarray(k, dtype=float)
        z = self.zeta(y)
        zp = self.zeta_prime(y)
        val = np.prod(z, axis=1)
        grad = np.empty_like(y)
        for i in range(self.d):
            others = np.prod(np.delete(z, i, axis=1), axis=1) if self.d > 1 else 1.0
            grad[:, i] = zp[:, i] * others
        return val, grad

    def sum_of_squares(self, x):
        """``sum_k zeta^2(x + r k)`` for scalar coordinates ``x``."""
        x = np.asarray(x, dtype=float)
        k0 = np.floor(x / self.r)
        total = np.zeros_like(x)
        for shift in range(-2, 3):
            total += self.zeta(x - self.r * (k0 + shift)) ** 2
        return total

    def gradient_sum(self, y):
        """``sum_k zeta'(y - r k)^2`` for scalar coordinates ``y``."""
        y = np.asarray(y, dtype=float)
        k0 = np.floor(y / self.r)
        total = np.zeros_like(y)
        for shift in range(-2, 3):
            total += self.zeta_prime(y - self.r * (k0 + shift)) ** 2
        return total

    def measure_K(self, samples=40001):
        """``r^2 sup_x sum_k |grad eta_k|^2(x)``.

        The sum factorises over axes because ``sum_k zeta^2 = 1`` on each axis,
        giving ``d * sup_y sum_k zeta'(y - r k)^2``; the one-dimensional sup is
        taken over a period on a dense grid.
        """
        return _measure_K(self.d, self.r, samples)


@lru_cache(maxsize=64)
def _measure_K(d, r, samples):
    spec = PartitionSpec(d, r)
    y = np.linspace(0.0, r, samples)
    return float(r**2 * d * np.max(spec.gradient_sum(y)))


def partition_eval(spec: PartitionSpec, k, x):
    return spec.eta(k, x)


@dataclass
class BoundReport:
    lambda_big: float
    lambda_small: float
    lambda_full: float
    K_measured: float
    r: float
    slack: float
    holds: tuple
    n_big: int
    n_small: int
    convention_check: dict = field(default_factory=dict)

    def to_dict(self):
        return {"lambda_big": self.lambda_big, "lambda_small": self.lambda_small,
                "lambda_full": self.lambda_full, "K_measured": self.K_measured, "r": self.r,
                "slack": self.slack, "holds": list(self.holds), "n_big": self.n_big,
                "n_small": self.n_small, "convention_check": self.convention_check}


def _box_lambda(box, field, renorm, tol):
    lo, hi = box
    g = sub_grid(field.grid, lo, hi)
    H = assemble(g, restrict_field(field, g), renorm)
    return principal_eigenvalue(H, tol=tol, check_multiplicity=False)


def _k_range(limit, strict):
    m = int(np.floor(limit))
    if strict and m == limit:
        m -= 1
    return range(-m, m + 1)


def check_box_bounds(grid, potential, r, k_eigs=1, renorm=None, tol=DEFAULT_TOL, threads=1):
    """Evaluate both sides of the sub-box inequality on one (coupled) potential sample.

    Small boxes are ``c + r k + (-r/2, r/2)^d`` for ``|k|_inf < L/(2r) - 1/2``;
    big boxes are ``c + r k + (-3r/4, 3r/4)^d`` for ``|k|_inf <= L/(2r) + 3/4``,
    intersected with the box ``Q_L`` (``c`` is its centre).  All sub-box
    potentials are restrictions of ``potential``.  A bound holds when it is
    satisfied up to ``2 a^2 + 10 tol``.
    """
    if k_eigs != 1:
        raise ValueError("only the principal eigenvalue is bounded by sub-boxes")
    L, a, d = grid.L, grid.a, grid.d
    if not 1.0 <= r < L:
        raise ValueError("need 1 <= r < L")
    if abs(r / a - round(r / a)) > 1e-8:
        raise ValueError(f"r={r} is not a multiple of the spacing {a}")
    centre = np.array([o + L / 2.0 for o in grid.offset])
    lo_box, hi_box = np.array(grid.offset), np.array(grid.offset) + L

    def boxes(limit, strict, half):
        out = []
        for k in itertools.product(_k_range(limit, strict), repeat=d):
            c = centre + r * np.array(k)
            lo = np.maximum(c - half, lo_box)
            hi = np.minimum(c + half, hi_box)
            if np.any(hi - lo < 2 * a - 1e-12):
                continue
            out.append((tuple(k), (lo, hi)))
        return out

    small = boxes(L / (2 * r) - 0.5, True, r / 2.0)
    big = boxes(L / (2 * r) + 0.75, False, 0.75 * r)

    def solve(items):
        fn = partial(_rect_lambda, field=potential, renorm=renorm, tol=tol)
        return ordered_map(fn, [b for _, b in items], threads)

    lam_small = np.array(solve(small))
    lam_big = np.array(solve(big))
    H = assemble(grid, potential, renorm)
    lam_full = principal_eigenvalue(H, tol=tol, check_multiplicity=False)
    K = PartitionSpec(d, r).measure_K()
    slack = 2.0 * a * a + 10.0 * tol
    lower_ok = lam_big.min() - K / r**2 <= lam_full + slack
    upper_ok = lam_full <= lam_small.min() + slack

    # the other closed/open conventions for the two index ranges
    alt_small = boxes(L / (2 * r) - 0.5, False, r / 2.0)
    alt_big = boxes(L / (2 * r) + 0.75, True, 0.75 * r)
    check = {}
    extra_small = [b for b in alt_small if b[0] not in {s[0] for s in small}]
    if extra_small:
        check["small_closed_min"] = float(min(lam_small.min(), min(solve(extra_small))))
    dropped_big = [i for i, b in enumerate(big) if b[0] not in {s[0] for s in alt_big}]
    if dropped_big:
        keep = np.delete(lam_big, dropped_big)
        check["big_open_min"] = float(keep.min()) if keep.size else None
    changed = (check.get("small_closed_min", lam_small.min()) != lam_small.min()
               or check.get("big_open_min", lam_big.min()) != lam_big.min())
    check["min_changed"] = bool(changed)
    if changed:
        log.info("index-range convention changes the minimum: %s", check)

    return BoundReport(lambda_big=float(lam_big.min()), lambda_small=float(lam_small.min()),
                       lambda_full=float(lam_full), K_measured=K, r=float(r), slack=slack,
                       holds=(bool(lower_ok), bool(upper_ok)), n_big=len(big), n_small=len(small),
                       convention_check=check)


def _rect_lambda(box, field, renorm, tol):
    """Principal eigenvalue on an aligned box; boxes clipped to ``Q_L`` may be rectangular."""
    lo, hi = box
    master = field.grid
    a = master.a
    start = [int(round((lo[j] - master.offset[j]) / a)) for j in range(master.d)]
    stop = [int(round((hi[j] - master.offset[j]) / a)) - 1 for j in range(master.d)]
    vals = np.asarray(field.values)[tuple(slice(s, e) for s, e in zip(start, stop))]
    if len(set(vals.shape)) == 1:
        return _box_lambda(box, field, renorm, tol)
    return _rect_principal(vals, a, renorm.value if renorm is not None else 0.0, tol)


def _rect_principal(vals, a, shift, tol):
    mats = []
    for n in vals.shape:
        mats.append(sparse.diags([np.full(n - 1, -1.0), np.full(n, 2.0), np.full(n - 1, -1.0)],
                                 [-1, 0, 1]) / a**2)
    lap = mats[0]
    for m in mats[1:]:
        lap = sparse.kronsum(m, lap)
    H = (lap + sparse.diags(vals.reshape(-1) + shift)).tocsc()
    if H.shape[0] <= 400:
        return float(np.linalg.eigvalsh(H.toarray())[0])
    sigma = float(H.diagonal().min() - 4 * vals.ndim / a**2 - 1.0)
    w = eigsh(H, k=1, sigma=sigma, which="LM", tol=tol, return_eigenvectors=False)
    return float(w[0])
