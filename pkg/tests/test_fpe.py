import math
from fractions import Fraction

import numpy as np
import pytest

from momentlab.estimates import NOT_CONVERGED
from momentlab.fpe import (FpeInstabilityError, Grid, GridDensity, build_grid, density_moments,
                           fpe_equilibrium, fpe_evolve, fpe_operator, width_sweep)
from momentlab.relations import derive_relation, gaussian_closure_mu2
from momentlab.systems import cubic_attractor, ornstein_uhlenbeck

from oracles import stationary_moments

CUBIC_02 = cubic_attractor(Fraction(1, 5))


def gaussian_on(grid, var):
    x = grid.points
    return np.exp(-x * x / (2 * var)) / math.sqrt(2 * math.pi * var)


def test_build_grid_unit():
    g = build_grid(ornstein_uhlenbeck(), 20, 1001, 1.0)
    assert (g.x_min, g.x_max) == (-10.0, 10.0)
    assert g.spacing == pytest.approx(0.02)


def test_build_grid_closure_guess():
    sys_ = cubic_attractor(Fraction(1, 10))
    guess = gaussian_closure_mu2(derive_relation(sys_, 1))
    g = build_grid(sys_, 20, 1001, guess)
    assert g.halfwidth == pytest.approx(0.161, abs=5e-4)


def test_build_grid_nested_widths():
    grids = [build_grid(CUBIC_02, W, 10 * W + 1, 0.004) for W in (10, 20, 40, 80)]
    for inner, outer in zip(grids, grids[1:]):
        assert outer.x_min < inner.x_min and inner.x_max < outer.x_max
        assert outer.spacing == pytest.approx(inner.spacing)


@pytest.mark.parametrize("args", [(20, 1001, 0.0), (20, 1001, -1.0), (0, 1001, 1.0)])
def test_build_grid_rejects(args):
    with pytest.raises(ValueError):
        build_grid(CUBIC_02, *args)


def test_grid_minimum_points():
    with pytest.raises(ValueError):
        Grid(-1, 1, 10)


def test_moments_of_uniform():
    g = Grid(-1, 1, 1001)
    est = density_moments(GridDensity(g, np.full(g.n, 0.5)), (1, 2, 3))
    assert est.mu(2) == pytest.approx(1 / 3, rel=1e-5)
    assert abs(est.mu(1)) < 1e-12 and abs(est.mu(3)) < 1e-12
    assert est.se(2) == 0


def test_moments_of_standard_normal():
    g = Grid(-10, 10, 2001)
    est = density_moments(GridDensity(g, gaussian_on(g, 1.0)), (2, 4, 5))
    assert abs(est.mu(4) - 3) < 1e-6
    assert abs(est.mu(5)) < 1e-12
    assert est.truncation[4] < 1e-12


def test_truncation_indicator_sees_heavy_edge():
    g = Grid(-1, 1, 20001)
    est = density_moments(GridDensity(g, np.full(g.n, 0.5)), (4,))
    # |x|^4 mass beyond 0.95: (1 - 0.95^5)
    assert est.truncation[4] == pytest.approx(1 - 0.95 ** 5, rel=1e-3)


def test_operator_conserves_mass():
    g = build_grid(CUBIC_02, 20, 1001, 0.004)
    A = fpe_operator(CUBIC_02, g)
    assert np.abs(np.asarray(A.sum(axis=0))).max() < 1e-9 * abs(A).max()


def test_mass_and_positivity_over_ten_thousand_steps():
    g = build_grid(CUBIC_02, 20, 1001, 0.0045)
    rho, _ = fpe_evolve(CUBIC_02, g, dt=0.01, T=100)
    assert rho.info["steps"] == 10_000
    assert rho.info["mass_drift"] < 1e-9
    assert abs(rho.mass() - 1) < 1e-9
    assert rho.values.min() >= 0


def test_ou_density_matches_analytic():
    g = Grid(-8, 8, 1601)
    rho, conv = fpe_evolve(ornstein_uhlenbeck(), g, T=50)
    assert conv
    assert np.abs(rho.values - gaussian_on(g, 0.5)).max() < 1e-4


def test_crank_nicolson_with_huge_step_reports_instability():
    with pytest.raises(FpeInstabilityError, match="Peclet"):
        fpe_evolve(ornstein_uhlenbeck(), Grid(-8, 8, 64), dt=5, T=50, theta=0.5)


def test_evolve_rejects_bad_inputs():
    g = Grid(-1, 1, 64)
    with pytest.raises(ValueError):
        fpe_evolve(ornstein_uhlenbeck(), g, dt=-1, T=1)
    with pytest.raises(ValueError):
        fpe_evolve(ornstein_uhlenbeck(), g, T=1, init=np.ones(3))


def test_equilibrium_is_a_fixed_point():
    est = fpe_equilibrium(CUBIC_02, 20, T=100)
    assert est.reliable
    g = build_grid(CUBIC_02, 20, 1001, est.provenance["mu2_guess"])
    rho, _ = fpe_evolve(CUBIC_02, g, T=100)
    more, _ = fpe_evolve(CUBIC_02, g, T=10, init=rho.values)
    rel = abs(density_moments(more).mu(2) / density_moments(rho).mu(2) - 1)
    assert rel < 1e-6 * 10


def test_grid_refinement():
    coarse = fpe_equilibrium(CUBIC_02, 20, T=100, n_per_std=25)
    fine = fpe_equilibrium(CUBIC_02, 20, T=100, n_per_std=50)
    assert abs(fine.mu(2) / coarse.mu(2) - 1) < 5e-3


def test_independent_of_initial_condition():
    a = fpe_equilibrium(CUBIC_02, 20, T=100)
    b = fpe_equilibrium(CUBIC_02, 20, T=100, init="uniform")
    assert a.reliable and b.reliable
    assert b.mu(2) == pytest.approx(a.mu(2), rel=1e-4)
    assert b.mu(4) == pytest.approx(a.mu(4), rel=1e-4)


def test_against_stationary_density_quadrature():
    est = fpe_equilibrium(CUBIC_02, 40, T=100)
    L = est.provenance["x_max"]
    ref = stationary_moments(CUBIC_02.F, CUBIC_02.G2, L)
    assert est.mu(2) == pytest.approx(ref[2], rel=2e-3)
    assert est.mu(4) == pytest.approx(ref[4], rel=2e-3)


def test_short_run_is_flagged():
    est = fpe_equilibrium(cubic_attractor(Fraction(1, 20)), 20, T=5)
    assert NOT_CONVERGED in est.flags and not est.reliable


def test_sweep_subcritical_tails_settle():
    rows = width_sweep(cubic_attractor(Fraction(1, 10)), [10, 20, 40, 80], T=300)
    assert [r.W for r in rows] == [10, 20, 40, 80]
    assert abs(rows[-1].mu4 / rows[-2].mu4 - 1) < 0.01


def test_single_width_sweep_matches_direct_solve():
    sys_ = cubic_attractor(Fraction(1, 10))
    (row,) = width_sweep(sys_, [20], T=50)
    est = fpe_equilibrium(sys_, 20, T=50)
    assert row.mu2 == est.mu(2) and row.mu4 == est.mu(4)


def test_sweep_requires_increasing_widths():
    with pytest.raises(ValueError):
        width_sweep(CUBIC_02, [20, 10])


def test_sweep_records_row_errors_and_continues(monkeypatch):
    import momentlab.fpe as fpe_mod
    real = fpe_mod.fpe_equilibrium

    def flaky(system, W, *a, **kw):
        if W == 10:
            raise FpeInstabilityError("boom")
        return real(system, W, *a, **kw)

    monkeypatch.setattr(fpe_mod, "fpe_equilibrium", flaky)
    rows = width_sweep(CUBIC_02, [10, 20], T=20, mu2_guess=0.0045)
    assert rows[0].error == "boom" and math.isnan(rows[0].mu4)
    assert rows[1].error is None and rows[1].mu4 > 0


def test_density_dump_format():
    g = Grid(-1, 1, 64)
    lines = GridDensity(g, np.full(g.n, 0.5)).to_text().splitlines()
    assert len(lines) == 64
    x, r = map(float, lines[0].split())
    assert (x, r) == (-1.0, 0.5)
