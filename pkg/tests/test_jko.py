import math

import numpy as np
import pytest

from jkoflow import jko
from jkoflow.cost import PowerCost, RelativisticCost, smooth
from jkoflow.errors import NoConvergence
from jkoflow.geometry import Density, Grid
from jkoflow.jko import (
    JkoConfig,
    StepFailure,
    Trajectory,
    entropy,
    kkt_residual,
    objective,
    pi_step,
    pi_step_info,
    run_scheme,
)
from jkoflow.profiles import random_trig

from conftest import random_density


def test_entropy_examples(rng):
    assert entropy(Density.uniform(Grid(0, 1, 10))) == pytest.approx(0.0, abs=1e-15)
    assert entropy(Density(Grid(0, 0.5, 6), np.full(6, 2.0))) == pytest.approx(math.log(2))
    rho = random_density(rng, 7)
    direct = sum(v * math.log(v) for v in rho.values) * rho.grid.dx
    assert entropy(rho) == pytest.approx(direct, rel=1e-13)
    # 0 log 0 = 0
    assert entropy(Density(Grid(0, 1, 2), [0.0, 2.0])) == pytest.approx(math.log(2))


@pytest.mark.parametrize("kw", [{"h": 0}, {"h": -1.0}, {"h": 0.1, "eta": 0.0}, {"h": 0.1, "tol_inner": -1e-8},
                                {"h": 0.1, "max_iter": 0}, {"h": 0.1, "solver": "Newton"}, {"h": math.inf}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        JkoConfig(**kw)


def test_brute_force_size_limit():
    g = Density.uniform(Grid(0, 1, 7))
    with pytest.raises(ValueError):
        pi_step(g, PowerCost(2), JkoConfig(h=0.1, solver="BruteForce"))


def test_eta_default_rule():
    assert JkoConfig(h=0.1).eta_final(Grid(0, 1, 64)) == pytest.approx(2.44140625e-4)
    assert JkoConfig(h=0.1).eta_final(Grid(0, 1, 200)) == pytest.approx(1e-4)
    assert JkoConfig(h=0.1, eta=3e-3).eta_final(Grid(0, 1, 64)) == 3e-3


@pytest.mark.parametrize("solver,n,tol", [("DirectMirror", 16, 1e-9), ("EntropicScaling", 8, 3 * 1e-4 * 8), ("BruteForce", 3, 1e-9)])
def test_uniform_is_fixed_point(solver, n, tol):
    # the entropic solver is biased by O(eta) near the walls
    g = Density.uniform(Grid(0, 1, n), mass=2.0)
    out = pi_step(g, PowerCost(2), JkoConfig(h=0.05, eta=1e-4, solver=solver))
    np.testing.assert_allclose(out.values, g.values, atol=tol)
    assert out.mass == pytest.approx(g.mass, rel=1e-14)


def test_homogeneity_direct_mirror():
    g = random_trig(Grid(0, 1, 32), 7)
    c, cfg = PowerCost(2), JkoConfig(h=0.01, tol_inner=1e-10)
    lam = 2.5
    err = pi_step(g.scaled(lam), c, cfg).l1_distance(pi_step(g, c, cfg).scaled(lam))
    assert err <= 1e-6 * lam * g.mass


def test_log_shift_equivariance_is_homogeneity():
    from jkoflow.geometry import log_shift

    g = random_trig(Grid(0, 1, 16), 3)
    c, cfg = PowerCost(3), JkoConfig(h=0.02, tol_inner=1e-10)
    lam = 0.7
    a = pi_step(log_shift(g, lam), c, cfg)
    b = log_shift(pi_step(g, c, cfg), lam)
    assert a.l1_distance(b) <= 1e-6 * a.mass


def test_entropic_and_mirror_match_brute_force_n4():
    rng = np.random.default_rng(100)
    g = random_density(rng, 4)
    c = PowerCost(2)
    brute = pi_step(g, c, JkoConfig(h=0.1, solver="BruteForce"))
    ent = pi_step(g, c, JkoConfig(h=0.1, eta=1e-4, solver="EntropicScaling", tol_inner=1e-9))
    mir = pi_step(g, c, JkoConfig(h=0.1, tol_inner=1e-10))
    assert ent.l1_distance(brute) <= 1e-3
    assert mir.l1_distance(brute) <= 1e-4


def test_objective_decreases_below_entropy():
    g = random_trig(Grid(0, 1, 32), 11)
    c, h = PowerCost(2), 0.01
    rho = pi_step(g, c, JkoConfig(h=h))
    assert objective(rho, g, c, h) < entropy(g)
    assert objective(g, g, c, h) == pytest.approx(entropy(g))


def test_kkt_examples():
    u = Density.uniform(Grid(0, 1, 8))
    assert kkt_residual(u, u, PowerCost(2), 0.1) == pytest.approx(0.0, abs=1e-12)
    g = random_trig(Grid(0, 1, 32), 5)
    c, h = PowerCost(2), 0.01
    rho = pi_step(g, c, JkoConfig(h=h, tol_inner=1e-10))
    at_opt = kkt_residual(rho, g, c, h)
    assert at_opt <= 1e-4
    bumped = rho.values.copy()
    bumped[10] *= 1.1
    assert kkt_residual(Density(rho.grid, bumped).normalized(rho.mass), g, c, h) > at_opt


def test_mirror_reaches_tolerance_p3_and_relativistic():
    g = random_trig(Grid(0, 1, 32), 2)
    for c in (PowerCost(3), smooth(RelativisticCost(), 1e-2)):
        rho, info = pi_step_info(g, c, JkoConfig(h=0.02, tol_inner=1e-9))
        assert info.residual <= 1e-9
        assert kkt_residual(rho, g, c, 0.02) <= 1e-6


def test_zero_cells_in_input():
    grid = Grid(0, 1, 12)
    v = np.ones(12)
    v[4:6] = 0.0
    g = Density(grid, v)
    c = PowerCost(2)
    for solver in ("DirectMirror", "EntropicScaling"):
        out = pi_step(g, c, JkoConfig(h=0.01, solver=solver))
        assert np.all(np.isfinite(out.values)) and np.all(out.values >= 0)
        assert out.mass == pytest.approx(g.mass, rel=1e-12)
        # diffusion fills the gap
        assert np.all(out.values[4:6] > 0)


def test_run_scheme_basics(tmp_path):
    rho0 = random_trig(Grid(0, 1, 24), 1)
    c, cfg = PowerCost(2), JkoConfig(h=0.01)
    one = run_scheme(rho0, c, cfg, 1)
    assert len(one) == 2
    np.testing.assert_allclose(one.states[1].values, pi_step(rho0, c, cfg).values, rtol=1e-12)

    traj = run_scheme(rho0, c, cfg, 5)
    masses = np.array([s.mass for s in traj.states])
    np.testing.assert_allclose(masses, rho0.mass, rtol=1e-10)
    assert len(traj.steps) == 5
    np.testing.assert_allclose(traj.times, 0.01 * np.arange(6))

    traj.save(tmp_path / "traj")
    assert (tmp_path / "traj" / "meta.json").exists()
    assert (tmp_path / "traj" / "state_00005.csv").exists()
    back = Trajectory.load(tmp_path / "traj")
    assert back.h == traj.h and len(back) == len(traj)
    for a, b in zip(back.states, traj.states):
        np.testing.assert_array_equal(a.values, b.values)


def test_run_scheme_uniform_and_bad_steps():
    u = Density.uniform(Grid(0, 1, 10))
    traj = run_scheme(u, PowerCost(2), JkoConfig(h=0.05), 3)
    for s in traj.states:
        np.testing.assert_allclose(s.values, u.values, atol=1e-12)
    with pytest.raises(ValueError):
        run_scheme(u, PowerCost(2), JkoConfig(h=0.05), 0)


def test_entropic_warm_start_trajectory():
    rho0 = random_trig(Grid(0, 1, 32), 4)
    c = PowerCost(2)
    ent = run_scheme(rho0, c, JkoConfig(h=0.02, eta=1e-4, solver="EntropicScaling"), 3)
    mir = run_scheme(rho0, c, JkoConfig(h=0.02), 3)
    # entropic bias is O(eta n)
    assert ent.states[-1].l1_distance(mir.states[-1]) <= 3 * 1e-4 * 32


def test_step_failure_carries_index(monkeypatch):
    calls = {"n": 0}
    real = jko.pi_step_info

    def flaky(g, c, cfg, warm=None):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NoConvergence("stuck", residual=1.0, iterations=7)
        return real(g, c, cfg, warm)

    monkeypatch.setattr(jko, "pi_step_info", flaky)
    with pytest.raises(StepFailure) as info:
        run_scheme(Density.uniform(Grid(0, 1, 4)), PowerCost(2), JkoConfig(h=0.1), 3)
    assert info.value.step == 2
    assert isinstance(info.value.cause, NoConvergence)


def test_scaled_cost_input_rejected():
    g = Density.uniform(Grid(0, 1, 4))
    with pytest.raises(TypeError):
        pi_step(g, PowerCost(2).scaled(0.1), JkoConfig(h=0.1))


def test_cellwise_order_can_fail_for_steps_below_the_cell_scale():
    # h = 0.09 dx^2: the discrete minimiser lowers the far cell when mass is added on the left
    grid = Grid(0, 1, 3)
    g1, g2 = Density(grid, [1.0, 1.0, 1.0]), Density(grid, [2.0, 1.0, 1.0])
    c, h = PowerCost(2), 0.01
    a = pi_step(g1, c, JkoConfig(h=h, tol_inner=1e-10))
    b = pi_step(g2, c, JkoConfig(h=h, tol_inner=1e-10))
    brute = pi_step(g2, c, JkoConfig(h=h, solver="BruteForce"))
    np.testing.assert_allclose(brute.values, b.values, atol=1e-6)
    assert b.values[2] < a.values[2] - 5e-3
    # the ordered competitor is worse
    forced = b.values.copy()
    forced[0] -= a.values[2] - forced[2]
    forced[2] = a.values[2]
    assert objective(Density(grid, forced), g2, c, h) > objective(b, g2, c, h)


def test_mirror_stops_at_roundoff_floor():
    # tiny steps make the transport Hessian ~1/h, so 1e-11 is below round-off
    grid = Grid(0, 1, 16)
    g = Density(grid, np.random.default_rng(0).uniform(0.3, 3, 16))
    rho, info = pi_step_info(g, PowerCost(2), JkoConfig(h=0.01 * grid.dx**2, tol_inner=1e-13))
    assert rho.mass == pytest.approx(g.mass, rel=1e-12)
    assert info.residual < 1e-8
