"""End-to-end acceptance checks, one test per criterion, at the stated tolerances."""

import time

import numpy as np
import pytest
from scipy import stats

from anderson_lab.eigensolver import eigenvalue_gradient, principal_eigenvalue, smallest_eigenpairs
from anderson_lab.experiments import (
    restrict_noise, run_asymptotics, run_fluctuations, run_scaling_law, run_shape, run_tail,
    tail_envelope,
)
from anderson_lab.groundstate import compute_constants, limit_profiles, solve_ground_state
from anderson_lab.hamiltonian import assemble
from anderson_lab.lattice import build_grid, deterministic_field, sample_white_noise, sub_grid
from anderson_lab.ratefn import RateOptions, estimate_rate, limit_profile_discrepancy
from anderson_lab.renorm import lattice_green_diagonal, renorm_constant
from anderson_lab.subbox import PartitionSpec, check_box_bounds

pytestmark = pytest.mark.acceptance


def test_criterion_01_gn_constants_d1(criterion):
    t0 = time.perf_counter()
    prof = solve_ground_state(1)
    consts = compute_constants(prof)
    elapsed = time.perf_counter() - t0
    dk = abs(consts.kappa - 3 ** (-1 / 8))
    dq = abs(prof.Q0 - np.sqrt(2))
    ok = dk < 1e-6 and dq < 1e-8 and elapsed < 5.0
    criterion(1, ok, f"|kappa-3^(-1/8)|={dk:.1e} |Q(0)-sqrt2|={dq:.1e} runtime={elapsed:.2f}s")


def test_criterion_02_identity_chain(criterion, ground_states):
    details, ok = [], True
    for d in (1, 2, 3):
        prof, c, _ = ground_states[d]
        target = 2 * d / c.C_d
        e_l4 = abs(prof.norms["L4_4"] - target) / target
        rho_sup = 0.5 * c.sup_J ** -(2 - d / 2)
        e_rho = abs(d / c.C_d - rho_sup) / rho_sup
        ok &= e_l4 < 1e-4 and e_rho < 1e-6
        details.append(f"d={d}: L4 {e_l4:.1e}, rho {e_rho:.1e}")
    c1, c2, c3 = (ground_states[d][1] for d in (1, 2, 3))
    e1 = abs(c1.rho - 8 / 3)
    e2 = abs(c2.C_d - c2.kappa**4)
    e3 = abs(c3.C_d**2 - 243 / 64 * c3.kappa**8) / c3.C_d**2
    ok &= e1 < 1e-6 and e2 <= 1e-15 * c2.C_d and e3 < 1e-6
    details.append(f"rho_1-8/3={e1:.1e} C2-k2^4={e2:.1e} C3 rel={e3:.1e}")
    criterion(2, ok, "; ".join(details))


def test_criterion_03_limit_profiles(criterion, ground_states):
    res = {d: ground_states[d][2].residual_psi for d in (1, 2, 3)}
    x = np.linspace(0, 10, 4001)
    point = float(np.max(np.abs(ground_states[1][2].psi(x) - 1 / (np.sqrt(2) * np.cosh(x)))))
    ok = max(res.values()) < 1e-4 and point < 1e-6
    criterion(3, ok, f"residuals {', '.join(f'd={d}:{v:.1e}' for d, v in res.items())}; "
                     f"d=1 sup|psi*-1/(sqrt2 cosh)|={point:.1e}")


def test_criterion_04_eigensolver(criterion):
    # zero potential, n = 63 interior points, k = 5
    g = build_grid(1, 8.0, 8)
    assert g.n == 63
    H0 = assemble(g, deterministic_field(g, np.zeros(g.size)))
    lam = smallest_eigenpairs(H0, 5, tol=1e-12).eigenvalues
    j = np.arange(1, 6)
    exact = 4 / g.a**2 * np.sin(j * np.pi / (2 * (g.n + 1))) ** 2
    e_closed = float(np.max(np.abs(lam - exact) / exact))

    # Hellmann-Feynman gradient against central differences at 20 uniformly drawn sites
    g2 = build_grid(1, 4.0, 8)
    V = sample_white_noise(g2, 0.5, 1).flat.copy()
    H = assemble(g2, deterministic_field(g2, V))
    grad = eigenvalue_gradient(H, 1, tol=1e-12)
    sites = np.random.default_rng(0).choice(g2.size, 20, replace=False)
    h, e_grad = 1e-5, 0.0
    for i in sites:
        Vp, Vm = V.copy(), V.copy()
        Vp[i] += h
        Vm[i] -= h
        fd = (principal_eigenvalue(H.with_potential(Vp), tol=1e-13)
              - principal_eigenvalue(H.with_potential(Vm), tol=1e-13)) / (2 * h)
        e_grad = max(e_grad, abs(fd - grad[i]) / abs(grad[i]))

    # constant shift
    Vn = sample_white_noise(g, 1.0, 2).flat
    r0 = smallest_eigenpairs(assemble(g, deterministic_field(g, Vn)), 5, tol=1e-12).eigenvalues
    r1 = smallest_eigenpairs(assemble(g, deterministic_field(g, Vn + 3.0)), 5, tol=1e-12).eigenvalues
    e_shift = float(np.max(np.abs(r1 - r0 - 3.0)))
    ok = e_closed < 1e-10 and e_grad <= 1e-5 and e_shift < 1e-12
    criterion(4, ok, f"closed form {e_closed:.1e}; gradient {e_grad:.1e}; shift {e_shift:.1e}")


def _structural(d, L, ppu, samples, k=3):
    g = build_grid(d, L, ppu)
    R = renorm_constant(d, g.a) if d > 1 else None
    half = L / 2
    inner = sub_grid(g, [-half / 2] * d, [half / 2] * d)
    # 2^d disjoint sub-boxes of side L/2
    corners = np.array(np.meshgrid(*[[-half, 0.0]] * d, indexing="ij")).reshape(d, -1).T
    parts = [sub_grid(g, c, c + half) for c in corners]
    n_parts = len(parts)

    def eig(grid, field, k):
        H = assemble(grid, field, R)
        return smallest_eigenpairs(H, k, tol=1e-11, check_multiplicity=False).eigenvalues

    mono = sand = 0
    for s in range(samples):
        xi = sample_white_noise(g, 1.0, s)
        full = eig(g, xi, max(k, n_parts))
        sub = eig(inner, restrict_noise(xi, inner), k)
        mono += bool(np.all(full[:k] <= sub + 1e-8))
        box = max(eig(p, restrict_noise(xi, p), 1)[0] for p in parts)
        sand += bool(full[0] <= full[n_parts - 1] <= box + 1e-8)
    return mono, sand


def test_criterion_05_structural(criterion):
    m1, s1 = _structural(1, 16.0, 8, 100)
    m2, s2 = _structural(2, 4.0, 8, 100)
    ok = m1 == s1 == m2 == s2 == 100
    criterion(5, ok, f"d=1 monotone {m1}/100 sandwich {s1}/100; d=2 monotone {m2}/100 sandwich {s2}/100")


def test_criterion_06_subbox(criterion):
    t0 = time.perf_counter()
    counts = {}
    for d, L in ((1, 32.0), (2, 16.0)):
        g = build_grid(d, L, 8)
        R = renorm_constant(d, g.a) if d > 1 else None
        good = 0
        for s in range(100):
            rep = check_box_bounds(g, sample_white_noise(g, 1.0, s), 4.0, renorm=R)
            good += rep.holds == (True, True)
        counts[d] = good
    x = np.random.default_rng(0).uniform(-100, 100, 10_000)
    pou = float(np.max(np.abs(PartitionSpec(1, 4.0).sum_of_squares(x) - 1)))
    Ks = [PartitionSpec(1, r).measure_K() for r in (4.0, 8.0, 16.0)]
    spread = (max(Ks) - min(Ks)) / min(Ks)
    elapsed = time.perf_counter() - t0
    ok = counts[1] == counts[2] == 100 and pou < 1e-12 and spread < 0.05 and elapsed < 600
    criterion(6, ok, f"d=1 {counts[1]}/100, d=2 {counts[2]}/100; partition {pou:.1e}; "
                     f"K spread {spread:.1e} (K={Ks[0]:.5f}); runtime={elapsed:.0f}s")


def test_criterion_07_rate_function(criterion, ground_states):
    t0 = time.perf_counter()
    est = {L: estimate_rate(build_grid(1, L, 64), -1.0, RateOptions()) for L in (5.0, 10.0, 20.0)}
    elapsed = time.perf_counter() - t0
    v = [est[L].value for L in (5.0, 10.0, 20.0)]
    rel = abs(v[2] - 8 / 3) / (8 / 3)
    disc = limit_profile_discrepancy(est[20.0], ground_states[1][2].V)
    ok = rel < 0.05 and v[0] >= v[1] >= v[2] and disc < 0.10 and elapsed < 300
    criterion(7, ok, f"I_5={v[0]:.6f} I_10={v[1]:.6f} I_20={v[2]:.6f} (rel {rel:.1e}); "
                     f"V* discrepancy {disc:.1e}; runtime={elapsed:.0f}s")


def test_criterion_08_renormalisation(criterion):
    a = 2.0 ** -np.arange(4, 10)
    g2 = np.array([lattice_green_diagonal(2, s) for s in a])
    slope = np.polyfit(np.log(1 / a), g2, 1)[0]
    e2 = abs(slope * 2 * np.pi - 1)
    g1 = lattice_green_diagonal(1, 2.0**-9)
    e1 = abs(g1 - 0.5) / 0.5
    g3 = [s * lattice_green_diagonal(3, s) for s in (2.0**-8, 2.0**-9)]
    e3 = abs(g3[1] - g3[0]) / abs(g3[0])
    ok = e2 < 0.02 and e1 < 0.005 and e3 < 0.01
    criterion(8, ok, f"d=2 slope*2pi-1={e2:.1e}; d=1 G={g1:.6f}; d=3 octave change {e3:.1e}")


def test_criterion_09_scaling_law(criterion):
    t0 = time.perf_counter()
    rep = run_scaling_law(1, 16.0, 0.5, replicas=500, seed=0, ppu=16)
    elapsed = time.perf_counter() - t0
    ok = rep.delta_beta == 0.0 and rep.p_value > 0.01 and elapsed < 300
    criterion(9, ok, f"KS={rep.ks_statistic:.4f} p={rep.p_value:.3f}; runtime={elapsed:.0f}s")


def test_criterion_10_asymptotics_trend(criterion):
    t0 = time.perf_counter()
    ladder = [2.0**m for m in range(6, 14)]
    res = run_asymptotics(1, ladder, replicas=20, seed=0, ppu=8)
    elapsed = time.perf_counter() - t0
    means = [float(a["mean_log_ratio"]) for a in res.aggregates]
    rho_s = stats.spearmanr(ladder, means).statistic
    last = means[-1]
    ok = rho_s == -1.0 and -0.9 <= last <= -0.3 and elapsed < 900
    criterion(10, ok, f"Spearman={rho_s:.3f}; ratio at 2^13={last:.4f} "
                      f"(limit -(3/8)^(2/3)={-(3 / 8) ** (2 / 3):.4f}); "
                      f"means={[round(m, 4) for m in means]}; runtime={elapsed:.0f}s")


def test_criterion_11_tail_and_probes(criterion, ground_states):
    xs = np.linspace(0.0, 4.0, 17)
    res = run_tail(1, [16.0, 32.0, 64.0], xs, replicas=200, seed=0, ppu=8)
    consts = ground_states[1][1]
    exps = [abs(tail_envelope(1, L, xs, consts=consts).exponent(
        tail_envelope(1, L, xs, consts=consts).x_c)) for L in (16.0, 32.0, 64.0, np.exp(8.0))]
    fl = run_fluctuations(1, 256.0, replicas=100, seed=0, ppu=8)
    sh = run_shape(1, 256.0, replicas=20, seed=0, ppu=8)
    ks = fl.extra["summary"]["ks_gumbel"]
    ok = (res.extra["monotone_in_x"] and res.extra["non_increasing_in_L"] and max(exps) <= 1e-12
          and np.isfinite(ks) and np.isfinite(sh.discrepancy_psi) and np.isfinite(sh.discrepancy_V))
    criterion(11, ok, f"monotone x {res.extra['monotone_in_x']}, non-increasing L "
                      f"{res.extra['non_increasing_in_L']}; max|exponent(x_c)|={max(exps):.1e}; "
                      f"Gumbel KS={ks:.3f}; shape discrepancy psi={sh.discrepancy_psi:.3f} "
                      f"V={sh.discrepancy_V:.3f}")
