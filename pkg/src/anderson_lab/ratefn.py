"""Rate function ``I_L(x) = inf{ ||V||^2 / 2 : lambda_1(Q_L, V) = x }`` on a lattice.

At a minimiser the Lagrange condition reads ``V = -c phi_1^2`` (the gradient of
``lambda_1`` in ``V_i`` is ``a^d phi_1(i)^2``), so the optimiser iterates

    V  <-  (1 - theta) V + theta * (-c phi_V^2),   c chosen so that lambda_1 = x,

where the scalar ``c`` is found by a bracketed root search.  This is the
norm-minimal step along the constraint gradient followed by a rescaling back
onto the constraint surface.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, optimize

from .eigensolver import eigenvalue_gradient, principal_eigenvalue, smallest_eigenpairs
from .hamiltonian import assemble
from .lattice import LatticeGrid, PotentialField, deterministic_field

log = logging.getLogger(__name__)


class RateOptimizationError(RuntimeError):
    """The fixed-point iteration stagnated; ``trace`` holds (iteration, value, violation) rows."""

    def __init__(self, message, trace=None, best=None):
        super().__init__(message)
        self.trace = trace or []
        self.best = best


@dataclass
class RateEstimate:
    L: float
    d: int
    target_x: float
    value: float
    V_opt: PotentialField
    achieved_lambda: float
    optimizer_stats: dict = field(default_factory=dict)

    def to_dict(self):
        return {"L": self.L, "d": self.d, "target_x": self.target_x, "value": self.value,
                "achieved_lambda": self.achieved_lambda,
                "iterations": self.optimizer_stats.get("iterations"),
                "constraint_violation": self.optimizer_stats.get("constraint_violation")}


@dataclass
class RateOptions:
    constraint_tol: float = 1e-9
    eig_tol: float = 1e-11
    max_iter: int = 200
    rel_tol: float = 1e-11
    damping: float = 1.0
    starts: int = 3
    seed: int = 0
    bump_width: float = 1.0


def _value(V, grid):
    return 0.5 * grid.cell_volume * float(np.sum(V**2))


def _lambda1(grid, V, tol):
    H = assemble(grid, deterministic_field(grid, V))
    return principal_eigenvalue(H, tol=tol, check_multiplicity=False)


def _fit_amplitude(grid, shape, x, opts, c_guess=1.0):
    """Scale ``c >= 0`` with ``lambda_1(c * shape) = x`` for a non-positive ``shape``."""

    def f(c):
        return _lambda1(grid, c * shape, opts.eig_tol) - x

    lo, hi = 0.0, max(c_guess, 1e-8)
    f_hi = f(hi)
    while f_hi > 0:
        lo, hi = hi, 2.0 * hi
        f_hi = f(hi)
        if hi > 1e12:
            raise RateOptimizationError("could not bracket the constraint")
    if lo == 0.0:
        # shrink from the guess so the bracket stays tight
        lo = 0.5 * hi
        while f(lo) < 0:
            hi, lo = lo, 0.5 * lo
            if lo < 1e-14:
                lo = 0.0
                break
    c = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return c


def _run_start(grid, x, centre, opts):
    pts = grid.coordinates()
    r2 = np.sum((pts - centre) ** 2, axis=1)
    shape = -np.exp(-r2 / opts.bump_width**2)
    c = _fit_amplitude(grid, shape, x, opts)
    V = c * shape
    value = _value(V, grid)
    trace = [(0, value, np.nan)]
    converged = False
    for it in range(1, opts.max_iter + 1):
        H = assemble(grid, deterministic_field(grid, V))
        spec = smallest_eigenpairs(H, 2, tol=opts.eig_tol, check_multiplicity=False)
        grad = eigenvalue_gradient(H, 1, spectrum=spec, tol=opts.eig_tol)
        target = -grad / grid.cell_volume
        if opts.damping < 1.0:
            target = (1.0 - opts.damping) * V / max(c, 1e-300) + opts.damping * target
        c = _fit_amplitude(grid, target, x, opts, c_guess=c)
        V_new = c * target
        new_value = _value(V_new, grid)
        step = np.sqrt(grid.cell_volume * np.sum((V_new - V) ** 2))
        V = V_new
        trace.append((it, new_value, step))
        if abs(new_value - value) <= opts.rel_tol * new_value and step <= 1e-5 * np.sqrt(2 * new_value):
            value = new_value
            converged = True
            break
        value = new_value
    lam = _lambda1(grid, V, opts.eig_tol)
    return V, value, lam, trace, converged


def estimate_rate(grid: LatticeGrid, target_x, opts: RateOptions | None = None):
    """Minimal ``||V||^2/2`` over lattice potentials with ``lambda_1 = target_x``.

    Starts from Gaussian wells at the box centre and at ``opts.starts - 1``
    random centres in the middle half of the box; the best converged run wins.
    """
    opts = opts or RateOptions()
    x = float(target_x)
    lam0 = _lambda1(grid, np.zeros(grid.size), opts.eig_tol)
    if x >= lam0 - opts.constraint_tol:
        if x > lam0 + opts.constraint_tol:
            raise ValueError(f"target {x} above lambda(Q_L, 0) = {lam0}; only constant shifts reach it")
        return RateEstimate(grid.L, grid.d, x, 0.0, deterministic_field(grid, np.zeros(grid.size)),
                            lam0, {"iterations": 0, "constraint_violation": abs(lam0 - x), "starts": 0})

    rng = np.random.default_rng(opts.seed)
    mid = np.array([o + grid.L / 2.0 for o in grid.offset])
    centres = [mid] + [mid + rng.uniform(-grid.L / 4, grid.L / 4, grid.d) for _ in range(opts.starts - 1)]
    best = None
    runs = []
    for centre in centres:
        V, value, lam, trace, ok = _run_start(grid, x, centre, opts)
        runs.append({"centre": centre.tolist(), "value": value, "iterations": len(trace) - 1,
                     "converged": ok})
        log.debug("start at %s: value %.12g after %d iterations", centre, value, len(trace) - 1)
        feasible = abs(lam - x) <= opts.constraint_tol
        if feasible and (best is None or value < best[1]):
            best = (V, value, lam, trace, ok)
    if best is None:
        raise RateOptimizationError("no start reached the constraint", trace=runs)
    V, value, lam, trace, ok = best
    if not ok:
        raise RateOptimizationError("fixed-point iteration did not settle", trace=trace,
                                    best=value)
    stats = {"iterations": len(trace) - 1, "constraint_violation": abs(lam - x), "starts": runs,
             "trace": trace}
    return RateEstimate(grid.L, grid.d, x, value, deterministic_field(grid, V), lam, stats)


def limit_profile_discrepancy(estimate: RateEstimate, V_star):
    """Relative discrete L^2 distance between ``V_opt`` and ``|x| V*(sqrt|x| (y - y0))``.

    ``V_star`` is a callable of the radius; ``y0`` is the ``V``-weighted centre of
    ``V_opt``.
    """
    grid = estimate.V_opt.grid
    V = estimate.V_opt.flat
    pts = grid.coordinates()
    w = -V / np.sum(-V)
    y0 = w @ pts
    s = np.sqrt(abs(estimate.target_x))
    ref = abs(estimate.target_x) * V_star(s * np.linalg.norm(pts - y0, axis=1))
    return float(np.linalg.norm(V - ref) / np.linalg.norm(V))


def rate_scaling_map(V: PotentialField, resample_ppu=None):
    """``W(x) = r^2 V(r x)`` with ``r^(4-d) = ||V||^-2``, so ``||W|| = 1``.

    Without ``resample_ppu`` the map is exact: ``W`` lives on the lattice of
    spacing ``a / r`` over the box scaled by ``1 / r``, and its operator is
    ``r^2`` times that of ``V``.  With ``resample_ppu`` the values are
    interpolated (linearly) onto a lattice of that density over the scaled box.
    """
    grid = V.grid
    norm_sq = V.l2_norm_sq()
    if not norm_sq > 0:
        raise ValueError("the scaling map needs a potential with positive norm")
    d = grid.d
    r = norm_sq ** (-1.0 / (4.0 - d))
    new_grid = LatticeGrid(d, grid.L / r, grid.n, grid.a / r, tuple(o / r for o in grid.offset))
    values = r * r * V.values
    params = {"scale_r": r, "source_norm_sq": norm_sq}
    if resample_ppu is None:
        return PotentialField(new_grid, values, "deterministic", params)
    from .lattice import build_grid

    target = build_grid(d, new_grid.L, resample_ppu, offset=new_grid.offset)
    axes = [np.concatenate(([new_grid.offset[j]], new_grid.axis(j), [new_grid.offset[j] + new_grid.L]))
            for j in range(d)]
    padded = np.pad(values, 1, mode="constant")
    interp = interpolate.RegularGridInterpolator(axes, padded, method="linear")
    return PotentialField(target, interp(target.coordinates()), "deterministic", params)


def rate_shift_bounds(I_at_b, a, L, delta, d=1):
    """Both sides of the shift inequality for ``I_L`` at level ``b`` shifted by ``a``.

    Returns ``((1 - delta) I + (1 - 1/delta) a^2 L^d / 2,
    (1 + delta) I + (1 + 1/delta) a^2 L^d / 2)``.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    shift = 0.5 * a * a * L**d
    lower = (1.0 - delta) * I_at_b + (1.0 - 1.0 / delta) * shift
    upper = (1.0 + delta) * I_at_b + (1.0 + 1.0 / delta) * shift
    return lower, upper
