import math

import numpy as np
import pytest

from jkoflow.cost import PowerCost, RelativisticCost, smooth
from jkoflow.diagnostics import lipschitz_log
from jkoflow.errors import NonPositiveDensity, StabilityViolation
from jkoflow.geometry import Density, Grid, interface_average
from jkoflow.profiles import cosine, random_trig
from jkoflow.reference import (
    PdeConfig,
    compare_jko_pde,
    heat_exact,
    interface_flux,
    pde_step,
    run_pde,
    stable_dt,
)


def test_uniform_unchanged():
    u = Density.uniform(Grid(0, 1, 16))
    out = pde_step(u, PowerCost(2), stable_dt(u, PowerCost(2)))
    np.testing.assert_array_equal(out.values, u.values)


def test_heat_stencil_matches_exact_step():
    # one explicit step against the eigenfunction solution: error O(dt^2 + dt dx^2)
    errs = []
    for n in (32, 64):
        grid = Grid(0, 1, n)
        rho = heat_exact(0.5, 0.0, grid)
        dt = 0.5 * stable_dt(rho, PowerCost(2))
        new = pde_step(rho, PowerCost(2), dt)
        errs.append(np.max(np.abs(new.values - heat_exact(0.5, dt, grid).values)) / dt)
    assert errs[1] < errs[0] / 3
    assert errs[1] < 1e-2


def test_mass_conserved():
    rho = random_trig(Grid(0, 2, 40), 3)
    for c in (PowerCost(2), PowerCost(1.5), RelativisticCost()):
        new = pde_step(rho, c, stable_dt(rho, c, 0.9))
        assert new.mass == pytest.approx(rho.mass, rel=1e-13)


def test_relativistic_flux_bound():
    rho = random_trig(Grid(0, 1, 64), 5, scale=3.0)
    c = RelativisticCost()
    for _ in range(50):
        assert np.all(np.abs(interface_flux(rho, c)) <= interface_average(rho))
        rho = pde_step(rho, c, stable_dt(rho, c, 0.9))


def test_stability_violation():
    rho = cosine(Grid(0, 1, 32), 0.5)
    c = PowerCost(2)
    with pytest.raises(StabilityViolation):
        pde_step(rho, c, 1.01 * stable_dt(rho, c))


def test_non_positive_update_is_an_error():
    rho = Density(Grid(0, 1, 3), [1.0, 1e-12, 1.0])
    c = PowerCost(2)
    with pytest.raises(NonPositiveDensity):
        pde_step(rho, c, stable_dt(rho, c))


def test_stable_dt_rule():
    rho = cosine(Grid(0, 1, 20), 0.3)
    assert stable_dt(rho, PowerCost(2), 0.9) == pytest.approx(0.9 * 0.05**2 / 2)
    # relativistic slope is at most 1, clamped below by 1
    assert stable_dt(rho, RelativisticCost()) == pytest.approx(0.05**2 / 2)


def test_heat_exact_examples():
    grid = Grid(0, 1, 32)
    np.testing.assert_allclose(heat_exact(0.5, 0.0, grid).values, cosine(grid, 0.5).values)
    np.testing.assert_allclose(heat_exact(0.5, 50.0, grid).values, 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        heat_exact(1.0, 0.0, grid)


def test_heat_exact_satisfies_heat_equation():
    res = []
    for n in (32, 64):
        grid = Grid(0, 1, n)
        t, d = 0.05, 1e-6
        dt_rho = (heat_exact(0.5, t + d, grid).values - heat_exact(0.5, t - d, grid).values) / (2 * d)
        v = heat_exact(0.5, t, grid).values
        lap = (v[2:] - 2 * v[1:-1] + v[:-2]) / grid.dx**2
        res.append(np.max(np.abs(dt_rho[1:-1] - lap)))
    assert res[1] < res[0] / 3


def test_heat_exact_general_length():
    grid = Grid(1.0, 3.0, 16)
    v = heat_exact(0.4, 0.1, grid).values
    expect = 1 + 0.4 * math.exp(-math.pi**2 * 0.1 / 4) * np.cos(math.pi * (grid.centers - 1.0) / 2)
    np.testing.assert_allclose(v, expect)


def test_run_pde_lands_on_t_end():
    rho = cosine(Grid(0, 1, 32), 0.5)
    run = run_pde(rho, PowerCost(2), PdeConfig(t_end=0.01), keep_every=10)
    assert run.times[-1] == pytest.approx(0.01, rel=1e-14)
    assert sum(run.dts) == pytest.approx(0.01, rel=1e-12)
    assert run.final.mass == pytest.approx(rho.mass, rel=1e-12)


def test_pde_config_validation():
    with pytest.raises(ValueError):
        PdeConfig(t_end=-1)
    with pytest.raises(ValueError):
        PdeConfig(t_end=1, cfl_safety=1.5)
    with pytest.raises(ValueError):
        PdeConfig(t_end=1, dt=0.0)


def test_lipschitz_nonincreasing_along_pde():
    for c in (PowerCost(2), smooth(RelativisticCost(), 1e-2)):
        rho = random_trig(Grid(0, 1, 48), 8)
        prev = lipschitz_log(rho)
        for _ in range(300):
            rho = pde_step(rho, c, stable_dt(rho, c, 0.9))
            cur = lipschitz_log(rho)
            assert cur <= prev + 1e-8
            prev = cur


def test_compare_uniform_is_zero():
    u = Density.uniform(Grid(0, 1, 16))
    cmp = compare_jko_pde(u, PowerCost(2), 1e-2, 5e-2)
    assert cmp.l1_error == pytest.approx(0.0, abs=1e-12)
    assert cmp.jko_steps == 5
    assert set(cmp.to_dict()) == {"t_end", "l1_error", "jko_steps", "pde_steps"}
    with pytest.raises(ValueError):
        compare_jko_pde(u, PowerCost(2), 3e-2, 5e-2)


def test_no_explicit_step_for_singular_slope():
    # Power(3): (c*)'(w) = sign(w) |w|^(1/2) has infinite slope at w = 0
    u = Density.uniform(Grid(0, 1, 8))
    with pytest.raises(StabilityViolation):
        stable_dt(u, PowerCost(3))
