import numpy as np
import pytest

from expansive.central import make_reference
from expansive.core import MassSystem
from expansive.minimize import SolveConfig, solve
from expansive.paths import TimeGrid

TIGHT = SolveConfig(grad_tol=1e-10, multistart=1)

TWO_BODY = dict(masses=[1.0, 1.0], a=[[1.0, 0.0], [-1.0, 0.0]], x0=[[1.0, 0.0], [-1.0, 0.0]])
MIXED = dict(masses=[1.0, 1.0, 1.0], a=[[1.0, 0.0], [1.0, 0.0], [-2.0, 0.0]],
             x0=[[1.0, 0.5], [1.0, -0.5], [-2.0, 0.0]])
PARABOLIC_SHIFT = [[0.2, 0.1], [-0.1, 0.15], [-0.1, -0.25]]


def hyperbolic_ref():
    return make_reference(MassSystem(TWO_BODY["masses"]), TWO_BODY["a"], TWO_BODY["x0"])


def mixed_ref():
    return make_reference(MassSystem(MIXED["masses"]), MIXED["a"], MIXED["x0"])


def parabolic_ref(n=3, shift=None):
    return make_reference(MassSystem([1.0] * n), x0_shift=shift)


def run(ref, T_max=1e4, n=512, cfg=TIGHT):
    return solve(ref, cfg, grid=TimeGrid.power_law(T_max, n))


@pytest.fixture(scope="session")
def hyperbolic():
    ref = hyperbolic_ref()
    return ref, run(ref)


@pytest.fixture(scope="session")
def mixed():
    ref = mixed_ref()
    return ref, run(ref)


@pytest.fixture(scope="session")
def parabolic():
    ref = parabolic_ref(3, PARABOLIC_SHIFT)
    return ref, run(ref)


@pytest.fixture(scope="session")
def homothetic():
    ref = parabolic_ref(3)
    return ref, run(ref)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
