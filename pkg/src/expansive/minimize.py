"""Minimization of the discrete renormalized action.

Limited-memory BFGS whose initial inverse Hessian is the inverse of the
kinetic stiffness matrix (the Riesz map of the discrete D-norm), so the
iteration count does not grow with the number of nodes.  The line search
backtracks from the unit step and treats any trial that trips the collision
guard as infinitely expensive.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .action import DiscreteAction
from .core import pair_gradient, pair_vectors, project_array
from .errors import CollisionAtStart
from .motion import (expected_energy, min_separation, node_energies,
                     positions)
from .paths import DiscretePath, TimeGrid, hardy_check, path_norm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveConfig:
    grad_tol: float = 1e-8
    max_iters: int = 5000
    memory: int = 20
    ls_shrink: float = 0.5
    multistart: int = 4
    rng_seed: int = 0
    collision_guard: float = 1e-10
    threads: int = 1
    far_field: bool = True
    check_hardy: bool = True

    def __post_init__(self):
        for name in ("grad_tol", "max_iters", "memory", "multistart",
                     "collision_guard", "threads"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.ls_shrink < 1:
            raise ValueError("ls_shrink must lie in (0, 1)")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    action: float
    grad_norm: float
    step: float
    hardy_ok: bool = True


@dataclass(frozen=True, eq=False)
class SolveReport:
    path: DiscretePath
    action: object
    iterations: int
    final_grad_norm: float
    min_separation: tuple
    energy_residual: float
    converged: bool
    trace: list = field(repr=False)
    start: int = 0
    alternatives: list = field(default_factory=list)

    def to_dict(self):
        return {
            "action": self.action.to_dict(),
            "iterations": self.iterations,
            "final_grad_norm": self.final_grad_norm,
            "min_separation": {"value": self.min_separation[0],
                               "t": self.min_separation[1]},
            "energy_residual": self.energy_residual,
            "converged": self.converged,
            "path_norm": path_norm(self.path),
            "start": self.start,
            "alternatives": self.alternatives,
            "grid": self.path.grid.to_dict(),
        }


class Stiffness:
    """Kinetic stiffness ``K`` on nodes ``1..n`` (node 0 pinned) and its inverse."""

    def __init__(self, grid, masses):
        inv = 1.0 / grid.widths
        diag = inv.copy()
        diag[:-1] += inv[1:]
        ab = np.zeros((2, grid.n))
        ab[0, 1:] = -inv[1:]
        ab[1] = diag
        self.chol = cholesky_banded(ab)
        self.m = masses

    def solve(self, g):
        n, N, d = g.shape
        x = cho_solve_banded((self.chol, False), (g / self.m[:, None]).reshape(n, -1))
        return x.reshape(n, N, d)

    def dual_norm(self, g):
        return float(np.sqrt(max(np.sum(g * self.solve(g)), 0.0)))


def _lbfgs(obj, K, phi0, cfg, sys):
    """Minimize ``obj`` over nodes 1..n starting from ``phi0``."""
    phi = np.array(phi0)
    f = obj.value(phi)
    g = obj.gradient(phi)
    gn = K.dual_norm(g)
    trace = [TraceRow(0, f, gn, 0.0, _hardy(phi, obj, sys, cfg))]
    S, Y = [], []
    c1 = 1e-4
    fails = 0
    it = 0
    while gn > cfg.grad_tol and it < cfg.max_iters:
        it += 1
        d = -_two_loop(g, S, Y, K)
        slope = float(np.sum(g * d))
        if not slope < 0:
            S, Y = [], []
            d = -K.solve(g)
            slope = float(np.sum(g * d))
        noise = 1e-13 * (1.0 + abs(f))
        alpha = 1.0
        accepted = False
        while alpha > 1e-14:
            trial = phi.copy()
            trial[1:] += alpha * d
            trial = project_array(trial, sys.masses)
            trial[0] = 0.0
            f_try = obj.value(trial)
            if f_try <= f + c1 * alpha * slope:
                accepted = True
                break
            if np.isfinite(f_try) and f_try <= f + noise and abs(alpha * slope) < 100 * noise:
                g_try = obj.gradient(trial)
                dd = float(np.sum(g_try * d))
                if 0.9 * slope <= dd <= -0.8 * slope:
                    accepted = True
                    break
            alpha *= cfg.ls_shrink
        if not accepted:
            if S:
                S, Y = [], []
                fails += 1
                if fails < 3:
                    continue
            break
        fails = 0
        g_new = obj.gradient(trial)
        s = trial[1:] - phi[1:]
        y = g_new - g
        sy = float(np.sum(s * y))
        if sy > 1e-12 * np.sqrt(np.sum(s * s) * np.sum(y * y)):
            S.append(s)
            Y.append(y)
            if len(S) > cfg.memory:
                S.pop(0)
                Y.pop(0)
        phi, f, g = trial, f_try, g_new
        gn = K.dual_norm(g)
        trace.append(TraceRow(it, f, gn, alpha, _hardy(phi, obj, sys, cfg)))
    return phi, f, gn, it, trace


def _two_loop(g, S, Y, K):
    q = g.copy()
    rhos = [1.0 / np.sum(s * y) for s, y in zip(S, Y)]
    alphas = []
    for s, y, rho in zip(reversed(S), reversed(Y), reversed(rhos)):
        a = rho * np.sum(s * q)
        alphas.append(a)
        q -= a * y
    r = K.solve(q)
    if S:
        y = Y[-1]
        r *= np.sum(S[-1] * y) / np.sum(y * K.solve(y))
    for s, y, rho, a in zip(S, Y, rhos, reversed(alphas)):
        b = rho * np.sum(y * r)
        r += (a - b) * s
    return r


def _hardy(phi, obj, sys, cfg):
    if not cfg.check_hardy:
        return True
    return hardy_check(DiscretePath(obj.grid, phi, sys))[2]


def _random_start(ref, grid, rng, obj):
    """Smooth random path with D-norm about a tenth of the initial offset."""
    sys = ref.system
    t = grid.nodes[:, None, None]
    coef = project_array(rng.standard_normal((3, sys.n, sys.dim)), sys.masses)
    shapes = [1 - t**-0.5, 1 - 1 / t, np.log(t) / (1 + np.log(t))]
    phi = sum(c * s for c, s in zip(coef, shapes))
    p = DiscretePath(grid, phi, sys)
    xt = ref.x0_shift.coords
    target = 0.1 * float(np.sqrt(np.einsum("i,id,id->", sys.masses, xt, xt)))
    if target == 0.0:
        r1 = ref.r0(1.0)
        target = 0.01 * float(np.sqrt(np.einsum("i,id,id->", sys.masses, r1, r1)))
    phi = np.asarray(p.values) * (target / max(path_norm(p), 1e-300))
    for _ in range(20):
        if np.isfinite(obj.value(phi)):
            return phi
        phi = 0.5 * phi
    return np.zeros_like(phi)


def solve(ref, cfg=None, init=None, grid=None):
    """Minimize the discrete renormalized action for ``ref``.

    Start 0 is ``init`` (or the zero path); the remaining ``multistart - 1``
    starts are random.  The lowest converged result is returned; equal
    actions (within 1e-9) are ordered by the trajectory values.
    """
    cfg = cfg or SolveConfig()
    if grid is None:
        grid = init.grid if init is not None else TimeGrid.power_law()
    sys = ref.system
    x0 = ref.x0.coords
    dist = np.linalg.norm(pair_vectors(sys, x0), axis=-1)
    if dist.min() <= 1e-14 * max(dist.max(), 1e-300):
        raise CollisionAtStart("initial configuration has a collision")
    obj = DiscreteAction(ref, grid, cfg.far_field, cfg.collision_guard)
    K = Stiffness(grid, sys.masses)
    starts = [np.zeros((grid.n + 1, sys.n, sys.dim)) if init is None
              else np.asarray(init.values)]
    children = np.random.SeedSequence(cfg.rng_seed).spawn(max(cfg.multistart - 1, 0))
    for child in children:
        starts.append(_random_start(ref, grid, np.random.default_rng(child), obj))
    if not np.isfinite(obj.value(starts[0])):
        raise CollisionAtStart("initial path runs into a collision")

    def run(phi0):
        return _lbfgs(obj, K, phi0, cfg, sys)

    if cfg.threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            runs = list(pool.map(run, starts))
    else:
        runs = [run(s) for s in starts]

    def key(idx):
        phi, f, gn, _, _ = runs[idx]
        ok = gn <= cfg.grad_tol
        return (not ok, f)

    order = sorted(range(len(runs)), key=key)
    best = order[0]
    conv = runs[best][2] <= cfg.grad_tol
    ties = [k for k in order if (runs[k][2] <= cfg.grad_tol) == conv
            and abs(runs[k][1] - runs[best][1]) <= 1e-9]
    if len(ties) > 1:
        best = min(ties, key=lambda k: tuple(runs[k][0].ravel()))
    phi, f, gn, its, trace = runs[best]
    path = DiscretePath(grid, phi, sys)
    if not conv:
        log.warning("minimizer stopped with dual gradient norm %.3e > %.1e",
                    gn, cfg.grad_tol)
    alternatives = [{"start": k, "action": runs[k][1],
                     "grad_norm": runs[k][2]} for k in range(len(runs))]
    return SolveReport(
        path=path, action=obj.breakdown(path.values), iterations=its,
        final_grad_norm=gn, min_separation=min_separation(ref, path),
        energy_residual=energy_residual(ref, path), converged=bool(conv),
        trace=trace, start=best, alternatives=alternatives)


def energy_residual(ref, path):
    """Largest deviation of the node energy from ``|a|^2/2`` on the middle decade."""
    t = path.grid.nodes
    T = t[-1]
    sel = (t >= T / 100) & (t <= T / 10)
    if not np.any(sel):
        sel = t >= 1.0
    e = node_energies(ref, path)
    return float(np.max(np.abs(e[sel] - expected_energy(ref))))


def euler_lagrange_residual(ref, path):
    """Weighted sup over interior nodes of the discrete Newton residual."""
    sys = path.system
    t = path.grid.nodes
    h = path.grid.widths
    phi = np.asarray(path.values)
    hm, hp = h[:-1, None, None], h[1:, None, None]
    acc = 2.0 * ((phi[2:] - phi[1:-1]) / hp - (phi[1:-1] - phi[:-2]) / hm) / (hm + hp)
    x = positions(ref, path)[1:-1]
    m = sys.masses[:, None]
    force = pair_gradient(sys, x) - m * ref.r0_ddot(t[1:-1])
    res = m * acc - force
    norm = np.sqrt(np.einsum("i,kid,kid->k", 1.0 / sys.masses, res, res))
    return float(np.max(norm * t[1:-1]))


def config_dict(cfg):
    return asdict(cfg)


def report_from_path(ref, path, cfg=None):
    """Diagnostics of an existing path (e.g. one read back from disk)."""
    cfg = cfg or SolveConfig()
    obj = DiscreteAction(ref, path.grid, cfg.far_field, cfg.collision_guard)
    K = Stiffness(path.grid, ref.system.masses)
    phi = np.asarray(path.values)
    gn = K.dual_norm(obj.gradient(phi))
    return SolveReport(
        path=path, action=obj.breakdown(phi), iterations=0, final_grad_norm=gn,
        min_separation=min_separation(ref, path),
        energy_residual=energy_residual(ref, path),
        converged=bool(gn <= cfg.grad_tol), trace=[])
