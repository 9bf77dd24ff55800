import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anderson_lab.eigensolver import principal_eigenvalue
from anderson_lab.hamiltonian import assemble
from anderson_lab.lattice import build_grid, deterministic_field
from anderson_lab.ratefn import (
    RateOptimizationError, RateOptions, estimate_rate, limit_profile_discrepancy,
    rate_scaling_map, rate_shift_bounds,
)

RHO_1 = 8.0 / 3.0


def _lam(field):
    return principal_eigenvalue(assemble(field.grid, field), tol=1e-11, check_multiplicity=False)


@pytest.fixture(scope="module")
def rate_l20():
    g = build_grid(1, 20.0, 16)
    return estimate_rate(g, -1.0, RateOptions(starts=1))


def test_zero_potential_is_optimal_at_free_eigenvalue():
    g = build_grid(1, 5.0, 8)
    lam0 = _lam(deterministic_field(g, np.zeros(g.size)))
    est = estimate_rate(g, lam0)
    assert est.value == 0.0
    assert np.all(est.V_opt.flat == 0.0)


def test_target_above_free_eigenvalue_rejected():
    g = build_grid(1, 5.0, 8)
    with pytest.raises(ValueError):
        estimate_rate(g, 10.0)


def test_d1_value_near_rho(rate_l20):
    assert abs(rate_l20.value - RHO_1) / RHO_1 < 0.05
    assert abs(rate_l20.achieved_lambda + 1.0) <= 1e-9


def test_estimate_invariants(rate_l20):
    V = rate_l20.V_opt
    assert rate_l20.value >= 0
    assert rate_l20.value == pytest.approx(0.5 * V.grid.a * np.sum(V.flat**2), rel=1e-14)
    assert _lam(V) == pytest.approx(-1.0, abs=1e-9)
    assert rate_l20.optimizer_stats["constraint_violation"] <= 1e-9


def test_sech_squared_oracle_is_feasible_and_not_better(rate_l20):
    """The continuum optimiser ``-2 sech^2`` sampled on the lattice nearly hits x=-1
    and its norm bounds the lattice optimum up to the discretisation error."""
    g = rate_l20.V_opt.grid
    y = g.coordinates()[:, 0] - (g.offset[0] + g.L / 2)
    Vs = -2.0 / np.cosh(y) ** 2
    lam = _lam(deterministic_field(g, Vs))
    assert lam == pytest.approx(-1.0, abs=5e-3)
    value = 0.5 * g.a * np.sum(Vs**2)
    assert value == pytest.approx(RHO_1, rel=1e-3)
    # the optimiser is close to the rescaled profile in L^2
    rel = np.linalg.norm(rate_l20.V_opt.flat - Vs) / np.linalg.norm(Vs)
    assert rel < 0.05


def test_discrepancy_against_sech_profile(rate_l20):
    prof = lambda r: -2.0 / np.cosh(r) ** 2  # noqa: E731
    assert limit_profile_discrepancy(rate_l20, prof) < 0.05


def test_monotone_in_L(rate_l20):
    small = estimate_rate(build_grid(1, 5.0, 16), -1.0, RateOptions(starts=1))
    assert small.value >= rate_l20.value
    # a lattice optimum sits below rho only by the O(a^2) discretisation bias
    assert rate_l20.value >= RHO_1 * (1 - 1e-3)


def test_nonconvergence_raises_with_trace():
    g = build_grid(1, 10.0, 8)
    with pytest.raises(RateOptimizationError) as info:
        estimate_rate(g, -1.0, RateOptions(max_iter=1, starts=1))
    assert info.value.trace


def test_scaling_map_fixed_point():
    g = build_grid(1, 4.0, 8)
    base = np.ones(g.size)
    V = deterministic_field(g, base / np.sqrt(g.a * g.size))
    assert V.l2_norm_sq() == pytest.approx(1.0, rel=1e-12)
    W = rate_scaling_map(V)
    assert W.params["scale_r"] == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(W.values, V.values, rtol=1e-12)


def test_scaling_map_r_half():
    g = build_grid(1, 2.0, 8)
    V = deterministic_field(g, np.full(g.size, np.sqrt(8.0 / (g.a * g.size))))
    assert V.l2_norm_sq() == pytest.approx(8.0, rel=1e-12)
    W = rate_scaling_map(V)
    assert W.params["scale_r"] == pytest.approx(0.5, rel=1e-12)
    assert W.grid.L == pytest.approx(2.0 * g.L)


@pytest.mark.parametrize("d", [1, 2])
def test_scaling_map_norm_and_eigenvalue(rng, d):
    g = build_grid(d, 3.0, 6)
    V = deterministic_field(g, -3.0 * rng.random(g.size))
    W = rate_scaling_map(V)
    r = W.params["scale_r"]
    assert W.l2_norm_sq() == pytest.approx(1.0, rel=1e-10)
    assert _lam(W) == pytest.approx(r**2 * _lam(V), rel=1e-8)


def test_scaling_map_resampled_within_tolerance():
    g = build_grid(1, 8.0, 32)
    y = g.coordinates()[:, 0] - (g.offset[0] + g.L / 2)
    V = deterministic_field(g, -3.0 / np.cosh(y) ** 2)
    W = rate_scaling_map(V, resample_ppu=32)
    r = W.params["scale_r"]
    assert W.l2_norm_sq() == pytest.approx(1.0, rel=1e-2)
    assert _lam(W) == pytest.approx(r**2 * _lam(V), rel=1e-2)


def test_scaling_map_rejects_zero():
    g = build_grid(1, 2.0, 4)
    with pytest.raises(ValueError):
        rate_scaling_map(deterministic_field(g, np.zeros(g.size)))


def test_shift_bounds_example():
    lo, hi = rate_shift_bounds(2.7, 0.1, 10.0, 0.5, d=1)
    assert hi == pytest.approx(4.2, abs=1e-12)
    assert lo == pytest.approx(0.5 * 2.7 - 0.5 * 0.01 * 10, abs=1e-12)


@given(I=st.floats(0, 100), delta=st.floats(1e-3, 0.999))
def test_shift_bounds_zero_shift(I, delta):
    lo, hi = rate_shift_bounds(I, 0.0, 7.0, delta)
    assert lo == pytest.approx((1 - delta) * I)
    assert hi == pytest.approx((1 + delta) * I)


@settings(max_examples=30)
@given(I=st.floats(0.1, 10))
def test_shift_bounds_pinch(I):
    lo, hi = rate_shift_bounds(I, 0.0, 3.0, 1e-9)
    assert hi - lo <= 3e-9 * I


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.2, 1.5])
def test_shift_bounds_delta_domain(delta):
    with pytest.raises(ValueError):
        rate_shift_bounds(1.0, 0.1, 1.0, delta)
