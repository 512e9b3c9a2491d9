import numpy as np
import pytest

from jkoflow.diagnostics import lipschitz_log
from jkoflow.geometry import Grid
from jkoflow.profiles import cosine, exponential, parse_profile, random_trig


def test_named_profiles():
    grid = Grid(0, 2, 20)
    u = parse_profile("uniform", grid)
    assert np.all(u.values == u.values[0]) and u.mass == pytest.approx(1.0)
    np.testing.assert_allclose(parse_profile("cosine:0.5", grid).values, cosine(grid, 0.5).values)
    e = parse_profile("exp:-2", grid)
    assert e.mass == pytest.approx(1.0)
    assert lipschitz_log(e) == pytest.approx(2.0)
    r = parse_profile("random:4,3", grid)
    np.testing.assert_array_equal(r.values, random_trig(grid, 4, 3).values)


def test_random_trig_is_deterministic_positive_and_smooth():
    grid = Grid(0, 1, 128)
    a, b = random_trig(grid, 9), random_trig(grid, 9)
    np.testing.assert_array_equal(a.values, b.values)
    assert np.all(a.values > 0) and a.mass == pytest.approx(1.0)
    assert not np.array_equal(a.values, random_trig(grid, 10).values)
    # |u'| <= sum_k |coef_k| pi k <= pi scale sqrt(2) * sum of normals; loose sanity bound
    assert lipschitz_log(random_trig(grid, 9, smoothness=2, scale=0.1)) < lipschitz_log(random_trig(grid, 9, smoothness=8, scale=1.0))


@pytest.mark.parametrize("text", ["cosine:1", "random:", "random:1,2,3", "triangle", "uniform:2", "random:1,0"])
def test_bad_profiles(text):
    with pytest.raises(ValueError):
        parse_profile(text, Grid(0, 1, 8))
