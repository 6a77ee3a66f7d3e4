import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from expansive.core import MassSystem, project_array
from expansive.paths import (DiscretePath, TimeGrid, hardy_check, path_norm,
                             path_resample, read_table, sup_bound, write_table)


def random_path(seed, n=64, T=1e3, bodies=3):
    rng = np.random.default_rng(seed)
    sys = MassSystem(rng.uniform(0.5, 2, bodies))
    grid = TimeGrid.power_law(T, n, rng.uniform(0.7, 1.5))
    vals = np.cumsum(rng.standard_normal((n + 1, bodies, 2)), axis=0)
    return DiscretePath(grid, vals, sys)


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.5, 2, 20]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([1, 3, 2, 20]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([1, 2, 5]))
    g = TimeGrid.geometric(1e3, 100, 1.05)
    assert g.nodes[0] == 1 and g.nodes[-1] == 1e3
    assert np.allclose(g.widths[1:] / g.widths[:-1], 1.05)


def test_path_pins_first_node_and_projects():
    sys = MassSystem([1, 3])
    grid = TimeGrid.power_law(100, 8)
    p = DiscretePath(grid, np.ones((9, 2, 2)), sys)
    assert np.all(p.values[0] == 0)
    assert np.abs(np.einsum("i,kid->kd", sys.masses, p.values)).max() <= 1e-15


def test_path_norm_examples():
    sys = MassSystem([1, 1])
    nodes = np.concatenate([[1.0, 2.0], np.linspace(3, 20, 5)])
    grid = TimeGrid(nodes)
    assert path_norm(DiscretePath.zeros(grid, sys)) == 0
    v = np.array([[0.3, -0.4], [-0.3, 0.4]])
    vals = np.zeros((grid.n + 1, 2, 2))
    vals[1:] = v
    p = DiscretePath(grid, vals, sys)
    assert path_norm(p) == pytest.approx(np.sqrt(np.sum(v * v)), rel=1e-14)
    assert path_norm(p.with_values(-2.5 * vals)) == pytest.approx(2.5 * path_norm(p), rel=1e-14)


def test_hardy_zero():
    p = DiscretePath.zeros(TimeGrid.power_law(100, 16), MassSystem([1, 1]))
    assert hardy_check(p) == (0.0, 0.0, True)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hardy_and_sup_bound_random(seed):
    p = random_path(seed)
    lhs, rhs, ok = hardy_check(p)
    assert ok and lhs <= rhs
    assert sup_bound(p) <= path_norm(p) ** 2 * (1 + 1e-12)


def test_resample_examples():
    p = random_path(3)
    same = path_resample(p, p.grid)
    assert np.array_equal(same.values, p.values)
    fine = path_resample(p, p.grid.refined())
    assert path_norm(fine) == pytest.approx(path_norm(p), rel=1e-12)
    longer = TimeGrid(np.concatenate([p.grid.nodes, [2e3, 5e3]]))
    ext = path_resample(p, longer)
    assert path_norm(ext) == pytest.approx(path_norm(p), rel=1e-12)
    assert np.allclose(ext.values[-1], p.values[-1], rtol=0, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_table_round_trip_exact(seed):
    p = random_path(seed, n=20)
    vals = np.asarray(p.values) * np.exp(np.random.default_rng(seed).uniform(-30, 30))
    buf = io.StringIO()
    write_table(buf, p.grid.nodes, vals)
    buf.seek(0)
    t, back, header = read_table(buf, 2)
    assert header[:3] == ["t", "body1_x", "body1_y"]
    assert np.array_equal(t, p.grid.nodes)
    assert np.array_equal(back, vals)


def test_project_array_batch():
    m = np.array([1.0, 2.0, 5.0])
    z = np.random.default_rng(0).standard_normal((4, 3, 2))
    out = project_array(z, m)
    assert np.abs(np.einsum("i,kid->kd", m, out)).max() <= 1e-14
