import numpy as np
import pytest

from conftest import TWO_BODY, hyperbolic_ref, parabolic_ref
from expansive import hj
from expansive.central import make_reference
from expansive.core import MassSystem, mass_inner
from expansive.errors import UnstableGradient
from expansive.hj import hj_residual, infinite_horizon_value, value_function

X0 = np.array(TWO_BODY["x0"])


def test_value_below_straight_line_bound():
    # phi = 0 is admissible with action 0, and x = a t is not a solution
    ref = hyperbolic_ref()
    s = value_function(ref, X0, 1e3)
    bound = -mass_inner(ref.r0_dot(1e3), ref.a)
    assert bound == pytest.approx(-2.0)
    assert s.v_value < bound - 1e-3


def test_value_parabolic_homothetic():
    ref = parabolic_ref(3)
    prev = np.inf
    for T in (1e2, 1e3, 1e4):
        s = value_function(ref, ref.x0, T)
        expect = -mass_inner(ref.r0_dot(T), ref.x0)
        assert s.v_value == pytest.approx(expect, abs=1e-10)
        assert abs(s.v_value) < prev
        prev = abs(s.v_value)


def test_value_converges_in_T():
    ref = hyperbolic_ref()
    v = [value_function(ref, X0, T).v_value for T in (250, 500, 1000, 2000)]
    d = np.abs(np.diff(v))
    assert np.all(d[1:] < d[:-1])


def test_value_node_doubling_order():
    ref = hyperbolic_ref()
    v = [value_function(ref, X0, 1e3, nodes=n).v_value for n in (256, 512, 1024)]
    ratio = (v[1] - v[0]) / (v[2] - v[1])
    assert ratio == pytest.approx(4.0, abs=0.8)


def test_value_rotation_invariant():
    ref = hyperbolic_ref()
    c, s = np.cos(0.9), np.sin(0.9)
    R = np.array([[c, -s], [s, c]])
    rref = make_reference(MassSystem([1, 1]), ref.a.coords @ R.T, X0 @ R.T)
    a = value_function(ref, X0, 1e3).v_value
    b = value_function(rref, X0 @ R.T, 1e3).v_value
    assert abs(a - b) <= 1e-8


def test_infinite_horizon_bookkeeping(hyperbolic):
    ref, rep = hyperbolic
    v = infinite_horizon_value(ref, rep)
    assert abs(v + mass_inner(ref.a, ref.x0) - rep.action.total) <= 1e-9


def test_hj_residual_two_body():
    ref = hyperbolic_ref()
    s = hj_residual(ref, X0 + np.array([[0.0, 0.1], [0.0, -0.1]]), 1e3)
    assert s.hj_residual <= 1e-3
    assert s.grad_error <= 1e-3
    assert np.abs(s.grad_v.sum(axis=0)).max() <= 1e-8


def test_hj_residual_parabolic_zero_energy():
    ref = parabolic_ref(2)
    x0 = ref.x0.coords + np.array([[0.05, 0.02], [-0.05, -0.02]])
    s = hj_residual(ref, x0, 1e3)
    assert s.hj_residual <= 1e-3
    assert s.grad_error <= 1e-3


def test_unstable_gradient_detected(monkeypatch):
    calls = iter([np.ones((2, 2)), 3 * np.ones((2, 2))])
    monkeypatch.setattr(hj, "_fd_gradient", lambda *a, **k: next(calls))
    with pytest.raises(UnstableGradient):
        hj_residual(hyperbolic_ref(), X0, 1e2, nodes=64)


def test_value_sample_rejects_short_horizon():
    with pytest.raises(ValueError):
        value_function(hyperbolic_ref(), X0, 0.5)
