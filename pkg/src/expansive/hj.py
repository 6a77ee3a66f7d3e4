"""Finite-horizon value function and the stationary Hamilton-Jacobi residual."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Configuration, mass_inner, mass_norm, potential, project_com
from .minimize import SolveConfig, solve
from .motion import expected_energy, velocities
from .errors import NotConverged, UnstableGradient
from .paths import DiscretePath, TimeGrid, path_resample


@dataclass(frozen=True, eq=False)
class ValueSample:
    x0: Configuration
    T: float
    v_value: float
    grad_v: np.ndarray | None
    hj_residual: float
    initial_velocity: np.ndarray
    grad_error: float = float("nan")
    path: DiscretePath | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.T > 1:
            raise ValueError("T must exceed 1")


def value_function(ref, x0, T, cfg=None, nodes=512, init=None):
    """``v(T, x0) = min A_[1,T] - <r0'(T), x0>_M`` with a free right end.

    The minimized action is the truncation to ``[1, T]``: no far-field terms,
    which makes ``phi'(T) = 0`` the natural boundary condition.
    """
    cfg = replace(cfg or SolveConfig(), far_field=False)
    if not isinstance(x0, Configuration):
        x0 = project_com(x0, ref.system)
    r = ref.with_x0(x0)
    grid = TimeGrid.power_law(T, nodes)
    if init is not None and init.grid is not grid:
        init = path_resample(init, grid)
    rep = solve(r, cfg, init=init, grid=grid)
    if not rep.converged:
        raise NotConverged(f"value function solve stopped at {rep.final_grad_norm:.2e}")
    v = rep.action.total - mass_inner(ref.r0_dot(T), x0.coords, ref.system)
    return ValueSample(x0=x0, T=float(T), v_value=float(v), grad_v=None,
                       hj_residual=float("nan"),
                       initial_velocity=velocities(r, rep.path)[0], path=rep.path)


def _fd_gradient(ref, base, T, step, cfg, nodes, threads):
    sys = ref.system
    jobs = []
    for i in range(sys.n):
        for c in range(sys.dim):
            for sgn in (1.0, -1.0):
                raw = base.x0.coords.copy()
                raw[i, c] += sgn * step
                jobs.append(project_com(raw, sys))

    def val(x):
        return value_function(ref, x, T, cfg, nodes, init=base.path).v_value

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            vals = list(pool.map(val, jobs))
    else:
        vals = [val(x) for x in jobs]
    vals = np.array(vals).reshape(sys.n, sys.dim, 2)
    return (vals[..., 0] - vals[..., 1]) / (2 * step)


def hj_residual(ref, x0, T, fd_step=None, cfg=None, nodes=512, threads=1):
    """Finite-difference ``grad v`` at ``x0`` and the residual
    ``|1/2 |grad v|^2_{M^-1} - U(x0) - h|``.

    Each perturbed point is re-projected to zero barycenter, so the central
    differences give the gradient as a covector that annihilates
    translations.  The gradient is recomputed with half the step; a change
    above 10% raises :class:`UnstableGradient`.
    """
    cfg = replace(cfg or SolveConfig(grad_tol=1e-11), multistart=1)
    if not isinstance(x0, Configuration):
        x0 = project_com(x0, ref.system)
    base = value_function(ref, x0, T, cfg, nodes)
    step = fd_step or 1e-4 * (1 + mass_norm(x0))
    g = _fd_gradient(ref, base, T, step, cfg, nodes, threads)
    g2 = _fd_gradient(ref, base, T, step / 2, cfg, nodes, threads)
    if np.linalg.norm(g - g2) > 0.1 * np.linalg.norm(g2):
        raise UnstableGradient("finite-difference gradient unstable under step halving")
    minv = 1.0 / ref.system.masses[:, None]
    res = abs(0.5 * np.sum(g * g * minv) - potential(x0) - expected_energy(ref))
    p = ref.system.masses[:, None] * base.initial_velocity
    err = np.sqrt(np.sum((g + p) ** 2 * minv) / np.sum(p * p * minv))
    return replace(base, grad_v=g, hj_residual=float(res), grad_error=float(err))


def infinite_horizon_value(ref, report):
    """``min A^ren - <a, x0>_M`` from a full solve."""
    return report.action.total - mass_inner(ref.a, ref.x0)
