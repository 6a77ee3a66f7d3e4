import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import PARABOLIC_SHIFT, hyperbolic_ref, mixed_ref, parabolic_ref
from expansive.action import DiscreteAction, action_eval, action_gradient
from expansive.central import make_reference
from expansive.core import MassSystem, pair_potential, pair_vectors, project_array
from expansive.errors import CollisionError, RegimeMismatch
from expansive.paths import DiscretePath, TimeGrid

REFS = {"hyperbolic": hyperbolic_ref, "mixed": mixed_ref,
        "parabolic": lambda: parabolic_ref(3, PARABOLIC_SHIFT)}


def smooth_phi(ref, t, seed=1, amp=0.1):
    rng = np.random.default_rng(seed)
    c = amp * rng.standard_normal((2, ref.system.n, ref.system.dim))
    t = np.asarray(t)[:, None, None]
    return c[0] * (1 - 1 / t) + c[1] * np.log(t) / (1 + np.log(t))


def path_on(ref, grid, **kw):
    return DiscretePath(grid, smooth_phi(ref, grid.nodes, **kw), ref.system)


@pytest.fixture(scope="module")
def refs():
    return {k: f() for k, f in REFS.items()}


def test_homothetic_zero_action_and_gradient():
    ref = parabolic_ref(3)
    grid = TimeGrid.power_law(1e4, 128)
    p = DiscretePath.zeros(grid, ref.system)
    b = action_eval(ref, p)
    assert abs(b.total) <= 1e-13
    assert b.tail_bound <= 1e-13
    assert np.abs(action_gradient(ref, p)).max() <= 1e-13


def test_hyperbolic_straight_line_zero_action():
    sys = MassSystem([1, 2, 3])
    a = [[1, 0], [0, 1], [-1, -2 / 3]]
    ref = make_reference(sys, a, x0=np.array(a) - np.average(a, axis=0, weights=[1, 2, 3]))
    b = action_eval(ref, DiscretePath.zeros(TimeGrid.power_law(1e4, 64), sys))
    assert abs(b.total) <= 1e-13


@pytest.mark.parametrize("name", sorted(REFS))
@pytest.mark.parametrize("far_field", [False, True])
def test_gradient_matches_directional_difference(refs, name, far_field):
    ref = refs[name]
    grid = TimeGrid.power_law(1e4, 48)
    obj = DiscreteAction(ref, grid, far_field)
    rng = np.random.default_rng(7)
    for k in range(10):
        phi = np.asarray(DiscretePath(grid, smooth_phi(ref, grid.nodes, seed=k),
                                      ref.system).values)
        delta = project_array(rng.standard_normal(phi.shape), ref.system.masses)
        delta[0] = 0
        g = obj.gradient(phi)
        h = 1e-6
        fd = (obj.value(phi + h * delta) - obj.value(phi - h * delta)) / (2 * h)
        exact = float(np.sum(g * delta[1:]))
        assert abs(fd - exact) <= 1e-6 * np.linalg.norm(g) * np.linalg.norm(delta)


@pytest.mark.parametrize("name", sorted(REFS))
def test_gradient_blocks_annihilate_translations(refs, name):
    ref = refs[name]
    grid = TimeGrid.power_law(1e4, 32)
    g = action_gradient(ref, path_on(ref, grid))
    assert np.abs(g.sum(axis=1)).max() <= 1e-12 * np.abs(g).max()
    # the M^-1 representative has zero mass-weighted barycenter
    riesz = g / ref.system.masses[:, None]
    assert np.abs(np.einsum("i,kid->kd", ref.system.masses, riesz)).max() <= 1e-12 * np.abs(g).max()


@pytest.mark.parametrize("name", sorted(REFS))
def test_translation_gauge(refs, name):
    ref = refs[name]
    grid = TimeGrid.power_law(1e4, 64)
    phi = smooth_phi(ref, grid.nodes)
    shift = np.array([3.0, -1.5])[None, None, :] * np.log(grid.nodes)[:, None, None]
    a = action_eval(ref, DiscretePath(grid, phi, ref.system))
    b = action_eval(ref, DiscretePath(grid, phi + shift, ref.system))
    assert b.total == pytest.approx(a.total, rel=1e-12, abs=1e-14)


def _naive_hyperbolic(ref, grid, phi):
    """Truncated action with a plain potential difference and no correction."""
    sys = ref.system
    h = grid.widths
    dphi = np.diff(phi, axis=0)
    kin = np.einsum("i,kid,kid->k", sys.masses, dphi, dphi) / (2 * h)
    tm = grid.midpoints
    r0 = ref.r0(tm)
    x = r0 + 0.5 * (phi[:-1] + phi[1:]) + ref.x0_shift.coords
    return float(np.sum(kin) + h @ (pair_potential(sys, x) - pair_potential(sys, r0)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([[1, 1, 1], [1, 2, 3], [1, 1, 1, 1]]))
def test_renormalizer_consistency_singletons(seed, masses):
    rng = np.random.default_rng(seed)
    sys = MassSystem(masses)
    a = rng.standard_normal((sys.n, 2))
    x0 = a + 0.1 * rng.standard_normal((sys.n, 2))
    ref = make_reference(sys, a, x0)
    grid = TimeGrid.power_law(1e3, 32)
    phi = np.asarray(DiscretePath(grid, smooth_phi(ref, grid.nodes, seed, 0.05), sys).values)
    split = DiscreteAction(ref, grid, far_field=False).value(phi)
    naive = _naive_hyperbolic(ref, grid, phi)
    assert abs(split - naive) <= 1e-10 * max(1.0, abs(naive))


@pytest.mark.parametrize("name", ["mixed", "parabolic"])
def test_correction_pair_form(refs, name):
    ref = refs[name]
    grid = TimeGrid.power_law(1e4, 32)
    obj = DiscreteAction(ref, grid)
    phi = smooth_phi(ref, grid.nodes)
    t = 3.7
    pair_form = np.sum(obj.coef * pair_vectors(ref.system, phi[5])) / t ** (4 / 3)
    direct = -np.sum(ref.system.masses[:, None] * ref.r0_ddot(t) * phi[5])
    assert pair_form == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("name", sorted(REFS))
def test_quadrature_second_order(refs, name):
    ref = refs[name]
    vals = []
    for n in (64, 128, 256, 512):
        grid = TimeGrid.power_law(1e4, n)
        vals.append(action_eval(ref, path_on(ref, grid)).total)
    d = np.diff(vals)
    ratios = d[:-1] / d[1:]
    assert np.all(np.abs(ratios - 4) <= 0.8)


def _gauss_oracle(ref, grid, phi, sub=10):
    """Kinetic term exact, potential difference by 3-point Gauss on ``sub``
    subcells per cell of the same piecewise-linear path."""
    sys = ref.system
    gx, gw = np.polynomial.legendre.leggauss(3)
    s = (np.arange(sub)[:, None] + 0.5 * (gx + 1)) / sub
    w = np.broadcast_to(0.5 * gw / sub, s.shape).ravel()
    s = s.ravel()
    t0, h = grid.nodes[:-1], grid.widths
    tq = t0[:, None] + h[:, None] * s
    pq = phi[:-1, None] + (phi[1:] - phi[:-1])[:, None] * s[None, :, None, None]
    r0 = ref.r0(tq)
    du = pair_potential(sys, r0 + pq + ref.x0_shift.coords) - pair_potential(sys, r0)
    dphi = np.diff(phi, axis=0)
    kin = np.einsum("i,kid,kid->k", sys.masses, dphi, dphi) / (2 * h)
    return float(np.sum(kin) + np.sum(h * (du @ w)))


def test_refinement_oracle_hyperbolic(refs):
    ref = refs["hyperbolic"]
    grid = TimeGrid.power_law(1e4, 8192)
    phi = np.asarray(path_on(ref, grid, amp=0.01).values)
    ours = DiscreteAction(ref, grid, far_field=False).value(phi)
    oracle = _gauss_oracle(ref, grid, phi)
    assert abs(ours - oracle) <= 1e-6 * abs(oracle)


def test_collision_reporting():
    ref = hyperbolic_ref()
    grid = TimeGrid.power_law(1e2, 32)
    phi = np.zeros((33, 2, 2))
    # cancel the motion on nodes 9..11 so both bodies sit at the origin
    obj = DiscreteAction(ref, grid)
    phi[9:12] = -(ref.r0(grid.nodes[9:12]) + ref.x0_shift.coords)
    assert obj.value(phi) == np.inf
    with pytest.raises(CollisionError) as info:
        obj.breakdown(phi)
    assert info.value.pair == (0, 1)
    assert grid.nodes[9] <= info.value.t <= grid.nodes[11]


def test_partition_mismatch_rejected():
    ref = mixed_ref()
    bad = ref.__class__(ref.regime, ref.a, ref.partition.__class__(
        ((0,), (1,), (2,)), ref.a, 1e-9), {}, ref.x0, ref.beta_b)
    with pytest.raises(RegimeMismatch):
        DiscreteAction(bad, TimeGrid.power_law(100, 16))


def test_breakdown_fields(refs):
    ref = refs["mixed"]
    grid = TimeGrid.power_law(1e4, 64)
    b = action_eval(ref, path_on(ref, grid))
    assert b.total == pytest.approx(b.kinetic + b.potential_diff + b.correction + b.tail)
    assert set(b.clusters) == {"1-1", "1-2"}
    assert set(b.pairs) == {(0, 1), (0, 2), (1, 2)}
    per_pair = sum(sum(v) for v in b.pairs.values())
    assert per_pair == pytest.approx(b.kinetic + b.potential_diff + b.correction, rel=1e-10)
    assert b.tail_bound >= 0
