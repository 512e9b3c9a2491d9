import math

import numpy as np
import pytest

from jkoflow.errors import NonPositiveDensity
from jkoflow.geometry import Density, Grid, InterfaceField, grad_log, integrate_interface, log_shift

from conftest import random_density


def test_grid_layout():
    g = Grid(-1.0, 3.0, 8)
    assert g.dx == pytest.approx(0.5)
    assert g.centers[0] - g.a == pytest.approx(g.dx / 2)
    assert g.b - g.centers[-1] == pytest.approx(g.dx / 2)
    assert np.all(np.diff(g.centers) > 0)
    assert len(g.edges) == 9 and len(g.interfaces) == 7


@pytest.mark.parametrize("a,b,n", [(0.0, 0.0, 4), (1.0, 0.0, 4), (0.0, 1.0, 0), (0.0, 1.0, -3)])
def test_grid_rejects_bad_input(a, b, n):
    with pytest.raises(ValueError):
        Grid(a, b, n)


def test_density_validation():
    g = Grid(0, 1, 3)
    with pytest.raises(ValueError):
        Density(g, [1.0, 2.0])
    with pytest.raises(ValueError):
        Density(g, [1.0, -1.0, 1.0])
    with pytest.raises(ValueError):
        Density(g, [1.0, np.nan, 1.0])
    d = Density(g, [1.0, 2.0, 3.0])
    assert d.mass == pytest.approx(2.0)
    with pytest.raises((ValueError, TypeError)):
        d.values[0] = 5.0


def test_grad_log_uniform_is_zero():
    rho = Density.uniform(Grid(0, 1, 8))
    assert np.all(grad_log(rho).values == 0.0)


def test_grad_log_linear_exponent():
    grid = Grid(0, 1, 16)
    rho = Density.from_function(grid, lambda x: np.exp(-2 * x))
    np.testing.assert_allclose(grad_log(rho).values, -2.0, atol=1e-12)


def test_grad_log_matches_direct_recomputation(rng):
    rho = random_density(rng, 5)
    v, dx = rho.values, rho.grid.dx
    direct = [(math.log(v[i + 1]) - math.log(v[i])) / dx for i in range(4)]
    np.testing.assert_allclose(grad_log(rho).values, direct, rtol=1e-14)


def test_grad_log_requires_positivity():
    with pytest.raises(NonPositiveDensity):
        grad_log(Density(Grid(0, 1, 3), [1.0, 0.0, 1.0]))


def test_interface_field_length():
    with pytest.raises(ValueError):
        InterfaceField(Grid(0, 1, 4), np.zeros(4))


def test_integrate_interface_examples(rng):
    grid = Grid(0, 1, 10)
    rho = Density.uniform(grid)
    zero = InterfaceField(grid, np.zeros(9))
    assert integrate_interface(rho, zero, lambda z: z**2) == 0.0
    ones = InterfaceField(grid, np.ones(9))
    assert integrate_interface(rho, ones, lambda z: z) == pytest.approx(9 / 10)

    rho = random_density(rng, 6)
    f = InterfaceField(rho.grid, rng.normal(size=5))
    v, dx = rho.values, rho.grid.dx
    brute = sum(f.values[i] ** 3 * 0.5 * (v[i] + v[i + 1]) * dx for i in range(5))
    assert integrate_interface(rho, f, lambda z: z**3) == pytest.approx(brute, rel=1e-13)


def test_log_shift_examples(rng):
    rho = random_density(rng, 7)
    assert np.array_equal(log_shift(rho, 0.0).values, rho.values)
    two = log_shift(Density.uniform(Grid(0, 1, 4)), math.log(2))
    np.testing.assert_allclose(two.values, 2.0)
    assert log_shift(rho, 1.0).mass == pytest.approx(math.e * rho.mass)


def test_csv_round_trip(tmp_path, rng):
    rho = random_density(rng, 9, a=-2.0, b=5.0)
    path = tmp_path / "rho.csv"
    rho.to_csv(path)
    assert path.read_text().splitlines()[0] == "x,rho"
    back = Density.from_csv(path)
    assert back.grid.n == 9
    assert np.array_equal(back.values, rho.values)
    assert back.grid.a == pytest.approx(-2.0) and back.grid.b == pytest.approx(5.0)
