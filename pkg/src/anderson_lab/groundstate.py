"""Radial ground state of ``-Delta Q - Q^3 = -Q`` and the constants built from it.

The profile is found by shooting on ``Q(0)`` with bisection between
trajectories that cross zero (overshoot) and trajectories whose slope turns
positive (undershoot).  Where the two bracketing trajectories separate, the
profile is continued with the decaying solution ``A r^-nu K_nu(r)``,
``nu = (d - 2)/2``, of the linearised equation; there ``Q^2`` is below 1e-8 so
the cubic term is negligible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate, special

from .lattice import SURFACE_AREA


class ShootingError(RuntimeError):
    pass


def _rhs(d):
    def f(r, y):
        q, p = y
        damp = (d - 1) / r * p if r > 0 else 0.0
        return [p, q - q**3 - damp]

    return f


def _shoot(d, s, r_end, dense=False, rtol=1e-13, atol=1e-16):
    """Integrate from the centre; returns (kind, solution) with kind in {'over', 'under', 'none'}."""
    if d == 1:
        r0, y0 = 0.0, [s, 0.0]
    else:
        r0 = 1e-4
        c = (s - s**3) / (2 * d)
        y0 = [s + c * r0**2, 2 * c * r0]

    def crosses_zero(r, y):
        return y[0]

    crosses_zero.terminal = True
    crosses_zero.direction = -1

    def turns_up(r, y):
        return y[1]

    turns_up.terminal = True
    turns_up.direction = 1

    sol = integrate.solve_ivp(_rhs(d), (r0, r_end), y0, method="DOP853", rtol=rtol, atol=atol,
                              events=(crosses_zero, turns_up), dense_output=dense)
    if sol.t_events[0].size:
        return "over", sol
    if sol.t_events[1].size:
        return "under", sol
    return "none", sol


def _tail_shape(d, r):
    """Decaying radial solution of ``Q'' + (d-1)/r Q' = Q`` and its derivative."""
    r = np.asarray(r, dtype=float)
    nu = (d - 2) / 2.0
    f = r ** (-nu) * special.kv(nu, r)
    fp = -(r ** (-nu)) * special.kv(nu + 1, r)
    return f, fp


def _simpson_uniform(y, h):
    n = len(y) - 1
    if n % 2:
        raise ValueError("Simpson's rule needs an even number of intervals")
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


@dataclass
class GroundStateProfile:
    """Radial samples of ``Q`` on ``[0, r_max]`` plus its norms (surface measure included)."""

    d: int
    r_grid: np.ndarray
    Q_values: np.ndarray
    dQ_values: np.ndarray
    Q0: float
    norms: dict
    tail_amplitude: float
    match_radius: float
    ode_residual: float
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self._spline = interpolate.CubicSpline(self.r_grid, self.Q_values,
                                               bc_type=((1, 0.0), (1, self.dQ_values[-1])))

    def Q(self, r):
        """Evaluate ``Q`` at radii ``r`` (spline inside ``r_max``, exact tail beyond)."""
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        inside = r <= self.r_grid[-1]
        out[inside] = self._spline(r[inside])
        if np.any(~inside):
            out[~inside] = self.tail_amplitude * _tail_shape(self.d, r[~inside])[0]
        return out

    def radial_integral(self, values):
        """``int_{R^d} f`` for a radial ``f`` sampled on ``r_grid``."""
        h = self.r_grid[1] - self.r_grid[0]
        w = SURFACE_AREA[self.d] * self.r_grid ** (self.d - 1)
        return _simpson_uniform(w * values, h)


def solve_ground_state(d, r_max=30.0, grid_n=6000, shoot_tol=1e-15):
    """Positive radial solution of ``Q'' + (d-1)/r Q' + Q^3 = Q`` on ``[0, r_max]``.

    Parameters
    ----------
    d : int
        Dimension (1, 2 or 3).
    r_max : float
        Radius of the output grid (at least 20).
    grid_n : int
        Number of grid intervals (at least 2000, even).
    shoot_tol : float
        Relative width of the final bisection bracket on ``Q(0)``.
    """
    if d not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2 or 3")
    if r_max < 20:
        raise ValueError("r_max must be at least 20")
    if grid_n < 2000:
        raise ValueError("grid_n must be at least 2000")
    grid_n += grid_n % 2
    r_end = max(r_max, 40.0)

    lo, hi = 1.0 + 1e-3, 2.0
    if _shoot(d, lo, r_end)[0] != "under":
        raise ShootingError(f"Q(0)={lo} does not undershoot")
    for _ in range(20):
        if _shoot(d, hi, r_end)[0] == "over":
            break
        lo, hi = hi, 2 * hi
    else:
        raise ShootingError("no overshooting initial value found")

    shots = 0
    while hi - lo > shoot_tol * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        kind, _ = _shoot(d, mid, r_end)
        shots += 1
        if kind == "over":
            hi = mid
        else:
            lo = mid

    _, sol_lo = _shoot(d, lo, r_end, dense=True)
    _, sol_hi = _shoot(d, hi, r_end, dense=True)
    r_sep = min(sol_lo.t[-1], sol_hi.t[-1])

    r = np.linspace(0.0, r_max, grid_n + 1)
    r0 = sol_lo.t[0]
    probe = r[(r >= r0) & (r < r_sep)]
    y_lo = sol_lo.sol(probe)
    y_hi = sol_hi.sol(probe)
    mid_q = 0.5 * (y_lo[0] + y_hi[0])
    apart = np.abs(y_hi[0] - y_lo[0]) > 1e-8 * np.abs(mid_q)
    small = mid_q**2 < 1e-8
    cut = np.nonzero(apart | small)[0]
    if cut.size == 0:
        raise ShootingError("bracketing trajectories never separate; increase r_max")
    r_match = probe[cut[0]]

    Q = np.empty_like(r)
    dQ = np.empty_like(r)
    core = r <= r_match
    core_r = np.clip(r[core], r0, None)
    y_core = 0.5 * (sol_lo.sol(core_r) + sol_hi.sol(core_r))
    Q[core], dQ[core] = y_core
    Q[0], dQ[0] = 0.5 * (lo + hi), 0.0
    f_m, _ = _tail_shape(d, r_match)
    q_m = 0.5 * (sol_lo.sol(r_match)[0] + sol_hi.sol(r_match)[0])
    amp = q_m / f_m
    f_t, fp_t = _tail_shape(d, r[~core])
    Q[~core], dQ[~core] = amp * f_t, amp * fp_t

    h = r[1] - r[0]
    w = SURFACE_AREA[d] * r ** (d - 1)

    def with_tail(vals, tail_fn):
        body = _simpson_uniform(w * vals, h)
        extra, _ = integrate.quad(lambda x: SURFACE_AREA[d] * x ** (d - 1) * tail_fn(x),
                                  r_max, np.inf, limit=200)
        return body + extra

    l2_sq = with_tail(Q**2, lambda x: (amp * _tail_shape(d, x)[0]) ** 2)
    l4_4 = with_tail(Q**4, lambda x: (amp * _tail_shape(d, x)[0]) ** 4)
    grad_sq = with_tail(dQ**2, lambda x: (amp * _tail_shape(d, x)[1]) ** 2)
    norms = {"L2": float(np.sqrt(l2_sq)), "L4": float(l4_4**0.25), "grad_L2": float(np.sqrt(grad_sq)),
             "L2_sq": float(l2_sq), "L4_4": float(l4_4), "grad_L2_sq": float(grad_sq)}

    res = _radial_residual(r, Q, d, lambda q: q - q**3)
    profile = GroundStateProfile(
        d=d, r_grid=r, Q_values=Q, dQ_values=dQ, Q0=float(Q[0]), norms=norms,
        tail_amplitude=float(amp), match_radius=float(r_match),
        ode_residual=float(np.max(np.abs(res))),
        stats={"bisection_steps": shots, "bracket": (lo, hi), "separation_radius": float(r_sep)})
    if not (np.all(Q > 0) and np.all(np.diff(Q) < 0)):
        raise ShootingError("profile is not positive and decreasing")
    return profile


def _fd_derivatives(values, h):
    """Fourth-order central differences (first and second derivative) on interior points."""
    v = values
    d1 = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * h)
    d2 = (-v[4:] + 16 * v[3:-1] - 30 * v[2:-2] + 16 * v[1:-3] - v[:-4]) / (12 * h * h)
    return d1, d2


def _radial_residual(r, u, d, reaction):
    """``u'' + (d-1)/r u' + reaction(u)`` on the interior points ``r[2:-2]``."""
    h = r[1] - r[0]
    d1, d2 = _fd_derivatives(u, h)
    rr = r[2:-2]
    return d2 + (d - 1) / rr * d1 - reaction(u[2:-2])


# --- constants ----------------------------------------------------------------


@dataclass(frozen=True)
class GNConstants:
    """Gagliardo-Nirenberg constant and the quantities derived from it."""

    d: int
    kappa: float
    C_d: float
    rho: float
    sup_J: float
    lambda_scale: float

    def a_L(self, L):
        """Centering ``(C_d log L)^(1/(2 - d/2))``."""
        return (self.C_d * np.log(L)) ** (1.0 / (2.0 - self.d / 2.0))

    def b_L(self, L):
        """Scale ``C_d / (d (2 - d/2) a_L^(1 - d/2))``."""
        return self.C_d / (self.d * (2.0 - self.d / 2.0) * self.a_L(L) ** (1.0 - self.d / 2.0))

    def prefactor(self):
        """``d^(1+d/2) (4-d)^(2-d/2) / 8``, so that ``C_d = prefactor * kappa^4``."""
        d = self.d
        return d ** (1 + d / 2) * (4 - d) ** (2 - d / 2) / 8.0

    def to_dict(self):
        return {"d": self.d, "kappa": self.kappa, "C_d": self.C_d, "rho": self.rho,
                "sup_J": self.sup_J, "lambda_scale": self.lambda_scale}


def compute_constants(profile: GroundStateProfile):
    """kappa_d from the optimiser ``Q``, then sup J, rho, C_d and the w* dilation."""
    d = profile.d
    nrm = profile.norms
    kappa = nrm["L4"] / (nrm["grad_L2"] ** (d / 4.0) * nrm["L2"] ** (1.0 - d / 4.0))
    sup_J = (d / 4.0) ** (d / (4.0 - d)) * ((4.0 - d) / 4.0) * kappa ** (8.0 / (4.0 - d))
    rho = 0.5 * sup_J ** (-(2.0 - d / 2.0))
    C_d = d / rho
    lam = (C_d / (2.0 * d)) ** (1.0 / (4.0 - d))
    return GNConstants(d=d, kappa=float(kappa), C_d=float(C_d), rho=float(rho),
                       sup_J=float(sup_J), lambda_scale=float(lam))


def scaling_maximizer(profile: GroundStateProfile):
    """Dilation maximising ``J(lambda^(d/2) u(lambda .))`` for ``u = Q/||Q||``, and the max."""
    d = profile.d
    nrm = profile.norms
    u4_sq = nrm["L4"] ** 2 / nrm["L2_sq"]
    grad_sq = nrm["grad_L2_sq"] / nrm["L2_sq"]
    lam = (d * u4_sq / (4.0 * grad_sq)) ** (1.0 / (2.0 - d / 2.0))
    value = lam ** (d / 2.0) * u4_sq - lam**2 * grad_sq
    return lam, value


@dataclass
class LimitProfiles:
    """``psi*``, ``w*`` and ``V*`` sampled on the radial grid."""

    d: int
    r_grid: np.ndarray
    psi_star: np.ndarray
    w_star: np.ndarray
    V_star: np.ndarray
    eigenvalue_w: float
    residual_psi: float
    residual_w: float
    w_star_coefficients: dict

    def __post_init__(self):
        # even in r, so the slope vanishes at the origin
        self._psi = interpolate.CubicSpline(self.r_grid, self.psi_star, bc_type=((1, 0.0), "not-a-knot"))
        self._V = interpolate.CubicSpline(self.r_grid, self.V_star, bc_type=((1, 0.0), "not-a-knot"))

    def psi(self, r):
        """Cubic-spline ``psi*`` at radii ``r`` (held at the last grid value beyond the grid)."""
        return self._psi(np.minimum(np.abs(r), self.r_grid[-1]))

    def V(self, r):
        return self._V(np.minimum(np.abs(r), self.r_grid[-1]))


def _relative_l2(profile, r, residual, reference):
    w = SURFACE_AREA[profile.d] * r ** (profile.d - 1)
    num = np.sum(w[2:-2] * residual**2)
    den = np.sum(w * reference**2)
    return float(np.sqrt(num / den))


def limit_profiles(profile: GroundStateProfile, consts: GNConstants):
    """Normalised eigenfunction ``psi*``, potential ``V*`` and the optimiser ``w*``.

    Checks ``-Delta psi* + V* psi* = -psi*`` and the ``w*`` Euler-Lagrange
    equation by finite differences on the grid.
    """
    d = profile.d
    r = profile.r_grid
    Qn = profile.norms["L2"]
    psi = profile.Q_values / Qn
    psi_l4_sq = profile.norms["L4"] ** 2 / Qn**2
    V = -(psi**2) / psi_l4_sq * np.sqrt(2.0 * d / consts.C_d)
    res_psi = -_radial_residual(r, psi, d, np.zeros_like) + V[2:-2] * psi[2:-2] + psi[2:-2]
    rel_psi = _relative_l2(profile, r, res_psi, psi)

    lam = consts.lambda_scale
    w = lam ** (d / 2.0) * profile.Q(lam * r) / Qn
    w_l4_sq = np.sqrt(lam**d * profile.norms["L4_4"] / Qn**4)
    eig = -(consts.C_d / (2.0 * d)) ** (1.0 / (2.0 - d / 2.0))
    res_w = -_radial_residual(r, w, d, np.zeros_like) - w[2:-2] ** 3 / w_l4_sq - eig * w[2:-2]
    rel_w = _relative_l2(profile, r, res_w, w)

    a_formula = Qn * 4.0 / (4.0 - d) * (consts.C_d / (2.0 * d)) ** ((8.0 - d) / (8.0 - 2.0 * d))
    b_formula = (a_formula * Qn) ** (2.0 / d)
    coeffs = {"a_formula": float(a_formula), "b_formula": float(b_formula),
              "a_direct": float(lam ** (d / 2.0) / Qn), "b_direct": float(lam)}
    coeffs["agree"] = bool(np.isclose(a_formula, coeffs["a_direct"], rtol=1e-6)
                           and np.isclose(b_formula, lam, rtol=1e-6))
    return LimitProfiles(d=d, r_grid=r, psi_star=psi, w_star=w, V_star=V, eigenvalue_w=float(eig),
                         residual_psi=rel_psi, residual_w=rel_w, w_star_coefficients=coeffs)


def gn_constants(d, **kw):
    """Convenience: solve, then return ``(profile, constants, limit profiles)``."""
    profile = solve_ground_state(d, **kw)
    consts = compute_constants(profile)
    return profile, consts, limit_profiles(profile, consts)
