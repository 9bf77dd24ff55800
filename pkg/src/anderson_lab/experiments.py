"""Monte Carlo harnesses: eigenvalue asymptotics, tail probabilities, the scaling law
in law, and the two extreme-value probes (fluctuations and local shape).

Every harness is a pure function of its arguments and a master seed.  Replica
``i`` draws its noise from ``SeedSequence(seed, spawn_key=(i,))`` (with an extra
group key where a harness needs independent groups), so results do not depend
on how replicas are spread over worker processes.  Nested boxes within a
replica are coupled: they see restrictions of one master noise field.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import ndimage, stats
from scipy.interpolate import RegularGridInterpolator

from .eigensolver import DEFAULT_TOL, ConvergenceError, smallest_eigenpairs
from .groundstate import compute_constants, limit_profiles, solve_ground_state
from .hamiltonian import assemble
from .lattice import build_grid, restrict_field, sample_white_noise, sub_grid
from .parallel import ordered_map
from .renorm import lattice_green_diagonal, renorm_constant

log = logging.getLogger(__name__)

D3_BANNER = "d=3: lattice renormalisation only; convergence to the continuum operator is not certified"


def replica_stream(seed, i, group=None):
    """Independent, scheduling-free stream for replica ``i`` (optionally within a group)."""
    key = (i,) if group is None else (group, i)
    return np.random.SeedSequence(seed, spawn_key=key)


def restrict_noise(master, sub):
    """Exact restriction of a noise sample to an aligned sub-grid (shares the sample)."""
    return restrict_field(master, sub)


_CONSTANTS = {}


def gn_for(d):
    """Cached ground-state constants for dimension ``d``."""
    if d not in _CONSTANTS:
        profile = solve_ground_state(d)
        consts = compute_constants(profile)
        _CONSTANTS[d] = (profile, consts, limit_profiles(profile, consts))
    return _CONSTANTS[d]


def _renorm(d, a, beta, order):
    if d == 1:
        return renorm_constant(1, a)
    return renorm_constant(d, a, beta=beta, order=order)


def _nested(master, L):
    """Centred box ``(-L/2, L/2)^d`` on the lattice of ``master``."""
    half = L / 2.0
    return sub_grid(master, [-half] * master.d, [half] * master.d)


def _eigs(grid, potential, renorm, k, tol):
    H = assemble(grid, potential, renorm)
    return smallest_eigenpairs(H, k, tol=tol, check_multiplicity=False)


# --- asymptotics ---------------------------------------------------------------


@dataclass
class SeriesResult:
    """Long-format rows plus per-L aggregates."""

    config: dict
    rows: list
    aggregates: list
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"config": self.config, "aggregates": self.aggregates, **self.extra}


def _asymptotics_replica(i, d, ladder, n, ppu, beta, seed, order, tol):
    Lmax = max(ladder)
    master = build_grid(d, Lmax, ppu)
    noise = sample_white_noise(master, beta, replica_stream(seed, i))
    R = _renorm(d, master.a, beta, order)
    out = []
    for L in ladder:
        g = _nested(master, L)
        try:
            lam = float(_eigs(g, restrict_noise(noise, g), R, n, tol).eigenvalues[n - 1])
            err = ""
        except (ConvergenceError, ArithmeticError) as exc:
            lam, err = float("nan"), str(exc)
        out.append((L, lam, err))
    return out


def run_asymptotics(d, L_ladder, n=1, replicas=20, seed=0, ppu=8, beta=1.0, order=None,
                    tol=DEFAULT_TOL, threads=1):
    """``lambda_{n,L}`` on nested centred boxes ``Q_L``, one master sample per replica.

    Returns rows ``(L, replica, n, lambda, ratio, log_ratio)`` with
    ``ratio = lambda / a_L`` and ``log_ratio = lambda / (log L)^(1/(2-d/2))``,
    plus per-L means and standard errors.  Failed solves are recorded as NaN.
    """
    ladder = sorted(float(L) for L in L_ladder)
    for L in ladder:
        m = np.log2(L)
        if abs(m - round(m)) > 1e-12:
            raise ValueError(f"ladder must be dyadic, got L={L}")
    if replicas < 1:
        raise ValueError("need at least one replica")
    _, consts, _ = gn_for(d)
    expo = 1.0 / (2.0 - d / 2.0)
    fn = partial(_asymptotics_replica, d=d, ladder=ladder, n=n, ppu=ppu, beta=beta, seed=seed,
                 order=order, tol=tol)
    per_rep = ordered_map(fn, range(replicas), threads)
    rows, failures = [], []
    for i, rep in enumerate(per_rep):
        for L, lam, err in rep:
            rows.append({"L": L, "replica": i, "n": n, "lambda": lam, "ratio": lam / consts.a_L(L),
                         "log_ratio": lam / np.log(L) ** expo})
            if err:
                failures.append({"L": L, "replica": i, "error": err})
    aggregates = []
    for L in ladder:
        lam = np.array([r["lambda"] for r in rows if r["L"] == L])
        ok = lam[np.isfinite(lam)]
        mean = float(ok.mean()) if ok.size else float("nan")
        se = float(ok.std(ddof=1) / np.sqrt(ok.size)) if ok.size > 1 else float("nan")
        aggregates.append({"L": L, "mean_lambda": mean, "stderr": se, "a_L": consts.a_L(L),
                           "mean_ratio": mean / consts.a_L(L),
                           "mean_log_ratio": mean / np.log(L) ** expo,
                           "log_ratio_stderr": se / np.log(L) ** expo, "samples": int(ok.size)})
    logr = [a["mean_log_ratio"] for a in aggregates]
    spearman = float(stats.spearmanr(ladder, logr).statistic) if len(ladder) > 2 else float("nan")
    extra = {"spearman_log_ratio": spearman, "failures": failures,
             "limit_log_ratio": -consts.C_d ** expo}
    if d == 3:
        extra["banner"] = D3_BANNER
    config = {"d": d, "L_ladder": ladder, "n": n, "replicas": replicas, "seed": seed, "ppu": ppu,
              "beta": beta, "order": order, "tol": tol}
    return SeriesResult(config, rows, aggregates, extra)


# --- tail ----------------------------------------------------------------------


@dataclass
class TailEnvelope:
    d: int
    L: float
    x: np.ndarray
    eta: float
    gamma1: float
    gamma2: float
    rho: float
    lower: np.ndarray
    upper: np.ndarray
    x_c: float

    def exponent(self, x, eta=0.0):
        """``d log L - (1 + eta) rho x^(2 - d/2)``."""
        return self.d * np.log(self.L) - (1.0 + eta) * self.rho * np.asarray(x) ** (2.0 - self.d / 2.0)


def tail_envelope(d, L, x, eta=0.0, gamma1=1.0, gamma2=1.0, consts=None):
    """Upper and lower tail bounds for ``P(lambda_{n,L} >= -x)`` at user-chosen constants."""
    consts = consts or gn_for(d)[1]
    rho = d / consts.C_d
    x = np.asarray(x, dtype=float)
    p = 2.0 - d / 2.0
    logL = np.log(L)
    # the envelope only speaks about x > 0; elsewhere report the trivial bounds [0, 1]
    xp = np.where(x > 0, x, 1.0)
    with np.errstate(over="ignore"):
        lower = np.exp(-gamma2 * xp ** (d / 2) * np.exp(d * logL - (1 - eta) * rho * xp**p))
        upper = np.exp(-gamma1 * xp ** (d / 2) * np.exp(d * logL - (1 + eta) * rho * xp**p))
    lower = np.where(x > 0, lower, 0.0)
    upper = np.where(x > 0, upper, 1.0)
    x_c = float((consts.C_d * logL) ** (1.0 / p))
    return TailEnvelope(d, float(L), x, eta, gamma1, gamma2, rho, lower, upper, x_c)


def _tail_replica(i, d, Ls, ppu, beta, seed, order, tol):
    Lmax = max(Ls)
    master = build_grid(d, Lmax, ppu)
    noise = sample_white_noise(master, beta, replica_stream(seed, i))
    R = _renorm(d, master.a, beta, order)
    return [float(_eigs(_nested(master, L), restrict_noise(noise, _nested(master, L)), R, 1, tol)
                  .eigenvalues[0]) for L in Ls]


def run_tail(d, L, x_grid, replicas=200, seed=0, ppu=8, beta=1.0, eta=0.0, gamma1=1.0, gamma2=1.0,
             order=None, tol=DEFAULT_TOL, threads=1, confidence=0.95):
    """Empirical ``P(lambda_{1,L} >= -x)`` with Wilson intervals and the analytic envelope.

    ``L`` may be a list of dyadic sizes; they are then evaluated on nested boxes
    of one sample per replica, so the empirical curves are ordered in ``L``.
    """
    Ls = sorted(float(v) for v in np.atleast_1d(L))
    x_grid = np.sort(np.asarray(x_grid, dtype=float))
    if replicas < 100:
        log.warning("run_tail with %d replicas: intervals are not meaningful below 100", replicas)
    fn = partial(_tail_replica, d=d, Ls=Ls, ppu=ppu, beta=beta, seed=seed, order=order, tol=tol)
    lam = np.array(ordered_map(fn, range(replicas), threads))
    consts = gn_for(d)[1]
    rows, curves = [], []
    for j, Lv in enumerate(Ls):
        env = tail_envelope(d, Lv, x_grid, eta, gamma1, gamma2, consts)
        p_hat = []
        for x, lo_env, up_env in zip(x_grid, env.lower, env.upper):
            hits = int(np.sum(lam[:, j] >= -x))
            ci = stats.binomtest(hits, replicas).proportion_ci(confidence, method="wilson")
            p_hat.append(hits / replicas)
            rows.append({"L": Lv, "x": float(x), "p_hat": hits / replicas, "ci_low": float(ci.low),
                         "ci_high": float(ci.high), "env_lower": float(lo_env),
                         "env_upper": float(up_env)})
        curves.append({"L": Lv, "x_c": env.x_c, "exponent_at_x_c": float(env.exponent(env.x_c)),
                       "p_hat": p_hat})
    monotone_x = all(np.all(np.diff(c["p_hat"]) >= 0) for c in curves)
    p = np.array([c["p_hat"] for c in curves])
    monotone_L = bool(np.all(np.diff(p, axis=0) <= 0)) if len(Ls) > 1 else True
    config = {"d": d, "L": Ls, "x_grid": x_grid.tolist(), "replicas": replicas, "seed": seed,
              "ppu": ppu, "beta": beta, "eta": eta, "gamma1": gamma1, "gamma2": gamma2,
              "order": order, "tol": tol}
    extra = {"monotone_in_x": bool(monotone_x), "non_increasing_in_L": monotone_L}
    if d == 3:
        extra["banner"] = D3_BANNER
    return SeriesResult(config, rows, curves, extra)


# --- scaling law ---------------------------------------------------------------


@dataclass
class ScalingLawReport:
    beta: float
    d: int
    L: float
    delta_beta: float
    A: np.ndarray
    B: np.ndarray
    ks_statistic: float
    p_value: float

    def to_dict(self):
        return {"beta": self.beta, "d": self.d, "L": self.L, "delta_beta": self.delta_beta,
                "samples": int(self.A.size), "ks_statistic": self.ks_statistic,
                "p_value": self.p_value, "mean_A": float(self.A.mean()), "mean_B": float(self.B.mean())}


def _scaling_replica(i, d, L, beta, n, ppu, seed, order, tol):
    gA = build_grid(d, L, ppu)
    nA = sample_white_noise(gA, 1.0, replica_stream(seed, i, group=0))
    RA = _renorm(d, gA.a, 1.0, order)
    lam_a = _eigs(gA, nA, RA, n, tol).eigenvalues[n - 1]
    # same number of sites on the dilated box: spacing a / beta
    gB = build_grid(d, L / beta, ppu * beta)
    if gB.n != gA.n:
        raise ValueError("L / beta is not representable with the same number of sites")
    bB = beta ** (2.0 - d / 2.0)
    nB = sample_white_noise(gB, bB, replica_stream(seed, i, group=1))
    RB = _renorm(d, gB.a, bB, order)
    lam_b = _eigs(gB, nB, RB, n, tol).eigenvalues[n - 1]
    return beta**2 * float(lam_a), float(lam_b)


def scaling_delta(d, a, beta, order=None):
    """Lattice ``delta_beta = beta^2 C_a(1) - C_{a/beta}(beta^(2-d/2))``."""
    if d == 1:
        return 0.0
    return (beta**2 * _renorm(d, a, 1.0, order).value
            - _renorm(d, a / beta, beta ** (2.0 - d / 2.0), order).value)


def run_scaling_law(d, L, beta, n=1, replicas=500, seed=0, ppu=16, order=None, tol=DEFAULT_TOL,
                    threads=1):
    """Two independent groups ``A = beta^2 lambda_n(Q_L, xi)`` and
    ``B = lambda_n(Q_{L/beta}, beta^(2-d/2) xi) + delta_beta`` with a two-sample KS test.

    Group B uses spacing ``a / beta`` so both lattices have the same number of
    sites; on such a pair the two laws coincide exactly.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    fn = partial(_scaling_replica, d=d, L=L, beta=beta, n=n, ppu=ppu, seed=seed, order=order, tol=tol)
    pairs = np.array(ordered_map(fn, range(replicas), threads))
    a = build_grid(d, L, ppu).a
    delta = scaling_delta(d, a, beta, order)
    A, B = pairs[:, 0], pairs[:, 1] + delta
    ks = stats.ks_2samp(A, B)
    return ScalingLawReport(float(beta), d, float(L), float(delta), A, B, float(ks.statistic),
                            float(ks.pvalue))


def continuum_delta_d2(a, beta, m=1.0):
    """``beta^2 (G_a(0) - G_{a/beta}(0))`` in d=2; tends to ``beta^2 log(1/beta) / (2 pi)``."""
    return beta**2 * (lattice_green_diagonal(2, a, m) - lattice_green_diagonal(2, a / beta, m))


# --- fluctuation and shape probes ------------------------------------------------


def _spectrum_replica(i, d, L, k, ppu, beta, seed, order, tol):
    g = build_grid(d, L, ppu)
    noise = sample_white_noise(g, beta, replica_stream(seed, i))
    res = _eigs(g, noise, _renorm(d, g.a, beta, order), k, tol)
    return res.eigenvalues.copy()


def run_fluctuations(d, L, n_max=1, replicas=200, seed=0, ppu=8, beta=1.0, order=None,
                     tol=DEFAULT_TOL, threads=1):
    """Normalised samples ``-(lambda_n + a_L)/b_L`` and their comparison with Poisson statistics.

    The KS distance of the ``n = 1`` samples to the standard Gumbel law is the
    headline diagnostic.  For the point process, ``exp(-z_n)`` should form a
    unit-rate Poisson process, so its spacings are compared with Exp(1).
    Non-gating.
    """
    if replicas < 100:
        log.warning("run_fluctuations with %d replicas: diagnostics are noisy", replicas)
    fn = partial(_spectrum_replica, d=d, L=L, k=n_max, ppu=ppu, beta=beta, seed=seed, order=order,
                 tol=tol)
    lam = np.array(ordered_map(fn, range(replicas), threads))
    consts = gn_for(d)[1]
    aL, bL = consts.a_L(L), consts.b_L(L)
    z = -(lam + aL) / bL
    ks = stats.kstest(z[:, 0], stats.gumbel_r.cdf)
    rows = [{"replica": i, "n": n + 1, "lambda": float(lam[i, n]), "normalized": float(z[i, n])}
            for i in range(replicas) for n in range(n_max)]
    summary = {"a_L": aL, "b_L": bL, "ks_gumbel": float(ks.statistic), "ks_p_value": float(ks.pvalue),
               "mean_normalized": float(z[:, 0].mean()), "gumbel_mean": float(np.euler_gamma)}
    if n_max > 1:
        e = np.exp(-z)
        gaps = np.diff(np.concatenate([np.zeros((replicas, 1)), e], axis=1), axis=1).reshape(-1)
        gks = stats.kstest(gaps, stats.expon.cdf)
        summary.update({"spacing_mean": float(gaps.mean()), "spacing_ks_exp1": float(gks.statistic),
                        "spacing_p_value": float(gks.pvalue)})
    config = {"d": d, "L": L, "n_max": n_max, "replicas": replicas, "seed": seed, "ppu": ppu,
              "beta": beta, "order": order, "tol": tol}
    extra = {"summary": summary}
    if d == 3:
        extra["banner"] = D3_BANNER
    return SeriesResult(config, rows, [], extra)


@dataclass
class ShapeReport:
    n: int
    x: np.ndarray
    eigen_profile: np.ndarray
    noise_profile: np.ndarray
    psi_ref: np.ndarray
    V_ref: np.ndarray
    discrepancy_psi: float
    discrepancy_V: float
    used: int
    skipped: int

    def to_dict(self):
        return {"n": self.n, "discrepancy_psi": self.discrepancy_psi,
                "discrepancy_V": self.discrepancy_V, "used": self.used, "skipped": self.skipped}

    def rows(self):
        return [{"x": float(x), "eigen_profile": float(e), "noise_profile": float(v),
                 "psi_star": float(p), "V_star": float(w)}
                for x, e, v, p, w in zip(self.x, self.eigen_profile, self.noise_profile,
                                         self.psi_ref, self.V_ref)]


def _shape_replica(i, d, L, n, ppu, beta, seed, order, tol, window, points, aL):
    g = build_grid(d, L, ppu)
    noise = sample_white_noise(g, beta, replica_stream(seed, i))
    res = _eigs(g, noise, _renorm(d, g.a, beta, order), n, tol)
    phi = np.abs(res.vector(n))
    centre = res.center_coordinates[n - 1]
    reach = window / np.sqrt(aL)
    lo = np.array(g.offset)
    if np.any(centre - reach < lo) or np.any(centre + reach > lo + g.L):
        return None
    x = np.linspace(-window, window, points)
    pts = np.tile(centre, (points, 1))
    pts[:, 0] = centre[0] + x / np.sqrt(aL)
    axes = [np.concatenate(([g.offset[j]], g.axis(j), [g.offset[j] + g.L])) for j in range(d)]
    smooth = ndimage.uniform_filter(np.asarray(noise.values), size=3, mode="nearest")
    f_phi = RegularGridInterpolator(axes, np.pad(phi, 1), method="linear")
    f_xi = RegularGridInterpolator(axes, np.pad(smooth, 1, mode="edge"), method="linear")
    return aL ** (-d / 4.0) * f_phi(pts), f_xi(pts) / aL


def run_shape(d, L, n=1, replicas=100, seed=0, window=4.0, ppu=8, beta=1.0, order=None,
              tol=DEFAULT_TOL, threads=1, points=201):
    """Replica-averaged profiles around the localisation centre, in the scale ``1/sqrt(a_L)``.

    The eigenfunction ``a_L^(-d/4)|phi_n|`` and the 3-site-averaged noise
    ``xi / a_L`` are sampled along the first axis through the maximum of
    ``|phi_n|`` and compared with ``psi*`` and ``V*`` (relative discrete L^2).
    Replicas whose window leaves the box are skipped.  Non-gating.
    """
    profile, consts, lp = gn_for(d)
    aL = consts.a_L(L)
    if window / np.sqrt(aL) < 2 * build_grid(d, L, ppu).a:
        raise ValueError("window is not resolved by the grid")
    fn = partial(_shape_replica, d=d, L=L, n=n, ppu=ppu, beta=beta, seed=seed, order=order, tol=tol,
                 window=window, points=points, aL=aL)
    res = ordered_map(fn, range(replicas), threads)
    kept = [r for r in res if r is not None]
    x = np.linspace(-window, window, points)
    psi_ref = lp.psi(x)
    V_ref = lp.V(x)
    if not kept:
        nan = np.full(points, np.nan)
        return ShapeReport(n, x, nan, nan, psi_ref, V_ref, float("nan"), float("nan"), 0, len(res))
    eig = np.mean([k[0] for k in kept], axis=0)
    xi = np.mean([k[1] for k in kept], axis=0)
    dpsi = float(np.linalg.norm(eig - psi_ref) / np.linalg.norm(psi_ref))
    dV = float(np.linalg.norm(xi - V_ref) / np.linalg.norm(V_ref))
    return ShapeReport(n, x, eig, xi, psi_ref, V_ref, dpsi, dV, len(kept), len(res) - len(kept))
