"""Minimal central configurations and the reference motion r0(t) = a t + beta b t^(2/3)."""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .core import (Configuration, cluster_partition,
                   hessian_matrix, pair_gradient, pair_potential, potential,
                   potential_gradient, project_com, mass_norm)
from .errors import DegenerateSystem, NotConverged, RegimeMismatch


@dataclass(frozen=True, eq=False)
class CentralConfigResult:
    b: Configuration
    u_value: float
    lam: float
    beta: float
    multistart_count: int
    is_certified_min: bool
    grad_residual: float = 0.0
    min_tangent_eig: float = 0.0

    def to_dict(self):
        return {
            "masses": self.b.system.masses.tolist(),
            "dim": self.b.system.dim,
            "coords": self.b.coords.tolist(),
            "u_value": self.u_value,
            "lambda": self.lam,
            "beta": self.beta,
            "multistart_count": self.multistart_count,
            "certified": self.is_certified_min,
            "grad_residual": self.grad_residual,
            "min_tangent_eig": self.min_tangent_eig,
        }


class _Sphere:
    """The inertia ellipsoid in mass-scaled coordinates ``y = M^(1/2) x``.

    In these coordinates the mass metric is Euclidean, the ellipsoid is the
    unit sphere and the barycenter constraint is orthogonality to ``d``
    fixed unit vectors.
    """

    def __init__(self, sys):
        self.sys = sys
        self.sq = np.repeat(np.sqrt(sys.masses), sys.dim)
        trans = np.zeros((sys.dim, sys.n * sys.dim))
        for c in range(sys.dim):
            trans[c, c::sys.dim] = np.sqrt(sys.masses)
        self.trans = trans / np.sqrt(sys.total_mass)

    def to_x(self, y):
        return (y / self.sq).reshape(self.sys.n, self.sys.dim)

    def normalize(self, y):
        y = y - self.trans.T @ (self.trans @ y)
        return y / np.linalg.norm(y)

    def tangent(self, y, v):
        v = v - self.trans.T @ (self.trans @ v)
        return v - (y @ v) * y

    def f(self, y):
        return float(pair_potential(self.sys, self.to_x(y)))

    def egrad(self, y):
        return pair_gradient(self.sys, self.to_x(y)).ravel() / self.sq

    def rgrad(self, y):
        return self.tangent(y, self.egrad(y))


def _descend(sphere, y, grad_tol, max_iter=2000):
    """Riemannian BFGS with Armijo backtracking; returns (y, |grad|, ok)."""
    k = y.size
    H = np.eye(k)
    f = sphere.f(y)
    g = sphere.rgrad(y)
    for _ in range(max_iter):
        gn = np.linalg.norm(g)
        if gn <= grad_tol:
            return y, gn, True
        d = -sphere.tangent(y, H @ g)
        slope = g @ d
        if slope >= 0:
            H = np.eye(k)
            d, slope = -g, -gn**2
        alpha = 1.0
        while True:
            y_new = sphere.normalize(y + alpha * d)
            f_new = sphere.f(y_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * alpha * slope:
                break
            # near convergence the decrease drops below rounding; accept a
            # step that reduces the gradient instead
            if abs(alpha * slope) < 1e-14 * abs(f):
                g_try = sphere.rgrad(y_new)
                if np.linalg.norm(g_try) < gn:
                    break
            alpha *= 0.5
            if alpha < 1e-16:
                return y, gn, False
        g_new = sphere.rgrad(y_new)
        s = sphere.tangent(y_new, y_new - y)
        yk = g_new - sphere.tangent(y_new, g)
        sy = s @ yk
        H = _project_matrix(sphere, y_new, H)
        if sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(yk):
            rho = 1.0 / sy
            V = np.eye(k) - rho * np.outer(s, yk)
            H = V @ H @ V.T + rho * np.outer(s, s)
        y, f, g = y_new, f_new, g_new
    return y, np.linalg.norm(g), False


def _project_matrix(sphere, y, H):
    k = y.size
    P = np.eye(k) - np.outer(y, y) - sphere.trans.T @ sphere.trans
    return P @ H @ P + (np.eye(k) - P)


def _tangent_eigs(b, lam):
    sys = b.system
    sphere = _Sphere(sys)
    y = b.coords.ravel() * sphere.sq
    hess = hessian_matrix(b) / np.outer(sphere.sq, sphere.sq)
    hess = hess - lam * np.eye(y.size)
    basis = np.vstack([sphere.trans, y[None, :]])
    _, _, vt = np.linalg.svd(basis)
    q = vt[basis.shape[0]:].T
    return np.linalg.eigvalsh(q.T @ hess @ q)


def _sorted_distances(b):
    c = b.coords
    i, j = b.system.pairs
    return tuple(np.sort(np.linalg.norm(c[i] - c[j], axis=-1)))


def find_minimal_cc(sys, seeds=32, rng_seed=0, grad_tol=1e-11,
                    hess_tol=1e-7, threads=1):
    """Minimize U on the inertia ellipsoid from ``seeds`` random starts.

    Returns the lowest converged critical point; ties within 1e-10 in U are
    broken by the sorted pairwise distances so the output is deterministic.
    """
    if sys.n < 2:
        raise DegenerateSystem("need at least two bodies")
    sphere = _Sphere(sys)
    children = np.random.SeedSequence(rng_seed).spawn(seeds)

    def run(child):
        rng = np.random.default_rng(child)
        y = sphere.normalize(rng.standard_normal(sys.n * sys.dim) * sphere.sq)
        return _descend(sphere, y, grad_tol)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(run, children))
    else:
        runs = [run(c) for c in children]

    best = None
    for y, gn, ok in runs:
        if not ok:
            continue
        b = project_com(sphere.to_x(y), sys)
        u = potential(b)
        key = (u, _sorted_distances(b))
        if best is None or u < best[0][0] - 1e-10 or (
                abs(u - best[0][0]) <= 1e-10 and key[1] < best[0][1]):
            best = (key, b, gn)
    if best is None:
        raise NotConverged(f"none of {seeds} central-configuration seeds converged")
    (u, _), b, gn = best
    lam = float(np.sum(potential_gradient(b) * b.coords))
    eigs = _tangent_eigs(b, lam)
    return CentralConfigResult(
        b=b, u_value=u, lam=lam, beta=float(np.cbrt(4.5 * u)),
        multistart_count=seeds, is_certified_min=bool(eigs.min() >= -hess_tol),
        grad_residual=float(gn), min_tangent_eig=float(eigs.min()))


def find_cluster_ccs(sys, partition, seeds=32, rng_seed=0, threads=1):
    """Minimal central configuration of every cluster with two or more bodies.

    Results are keyed by cluster index and live in the cluster's own
    sub-system (cluster masses, cluster barycenter zero).
    """
    out = {}
    for k in partition.nontrivial:
        sub = sys.subsystem(partition.clusters[k])
        seed = int(np.random.SeedSequence([rng_seed, k]).generate_state(1)[0])
        out[k] = find_minimal_cc(sub, seeds, seed, threads=threads)
    return out


class Regime(str, enum.Enum):
    HYPERBOLIC = "hyperbolic"
    PARABOLIC = "parabolic"
    HYPERBOLIC_PARABOLIC = "hyperbolic-parabolic"


def _classify(partition, a):
    if partition.all_singletons:
        return Regime.HYPERBOLIC
    if len(partition.clusters) == 1:
        if np.any(a.coords != 0) and mass_norm(a) > partition.tol_cluster:
            raise RegimeMismatch("single cluster with nonzero velocity")
        return Regime.PARABOLIC
    return Regime.HYPERBOLIC_PARABOLIC


@dataclass(frozen=True, eq=False)
class ReferenceMotion:
    """Regime, asymptotic velocity, cluster central configurations and x0."""

    regime: Regime
    a: Configuration
    partition: object
    cluster_configs: dict
    x0: Configuration
    beta_b: np.ndarray = field(repr=False)

    @property
    def system(self):
        return self.a.system

    @cached_property
    def x0_shift(self):
        return project_com(self.x0.coords - self.r0(1.0), self.system)

    def r0(self, t):
        """r0 at scalar or array ``t``; shape ``t.shape + (N, d)``."""
        t = np.asarray(t, dtype=float)[..., None, None]
        return self.a.coords * t + self.beta_b * np.cbrt(t) ** 2

    def r0_dot(self, t):
        t = np.asarray(t, dtype=float)[..., None, None]
        return self.a.coords + (2.0 / 3.0) * self.beta_b / np.cbrt(t)

    def r0_ddot(self, t):
        t = np.asarray(t, dtype=float)[..., None, None]
        return (-2.0 / 9.0) * self.beta_b / np.cbrt(t) ** 4

    def with_x0(self, x0):
        return ReferenceMotion(self.regime, self.a, self.partition,
                               self.cluster_configs, x0, self.beta_b)

    def cluster_betas(self):
        return {k: r.beta for k, r in self.cluster_configs.items()}

    @cached_property
    def far_field(self):
        """Quadratic form ``S`` of the decaying-mode far-field correction.

        Inside each parabolic cluster the linearized perturbation equation
        ``w'' = nu w / (beta^3 t^2)`` has power solutions ``t^s`` with
        ``s (s - 1) = nu / beta^3``.  Freezing the path after ``T`` overprices
        the optimal continuation by ``s^2 |c_s|^2 / (2 T)`` per mode; the
        action subtracts ``w^T S w / (2 T)`` to undo that bias.
        """
        sys = self.system
        k = sys.n * sys.dim
        S = np.zeros((k, k))
        for ci, res in self.cluster_configs.items():
            idx = np.array(self.partition.clusters[ci])
            sub = res.b.system
            sphere = _Sphere(sub)
            hess = hessian_matrix(res.b) / np.outer(sphere.sq, sphere.sq)
            _, _, vt = np.linalg.svd(sphere.trans)
            q = vt[sub.dim:].T
            nu, vec = np.linalg.eigh(q.T @ hess @ q)
            disc = np.maximum(1.0 + 4.0 * nu / res.beta**3, 0.0)
            s = 0.5 * (1.0 - np.sqrt(disc))
            # covectors M e_j of M-orthonormal modes e_j
            cov = (q @ vec) * sphere.sq[:, None]
            block = (cov * s**2) @ cov.T
            flat = (idx[:, None] * sys.dim + np.arange(sys.dim)).ravel()
            S[np.ix_(flat, flat)] += block
        return S


def reference_eval(ref, t):
    """``(r0(t), r0'(t), r0''(t))`` at a scalar time ``t >= 1``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    r0 = project_com(ref.r0(t), ref.system)
    return r0, ref.r0_dot(t), ref.r0_ddot(t)


def make_reference(system, a=None, x0=None, *, x0_shift=None, regime=None,
                   tol_cluster=1e-9, cc_seeds=32, cc_rng_seed=0, threads=1):
    """Assemble a :class:`ReferenceMotion`.

    ``a`` defaults to zero (parabolic).  Give either ``x0`` or ``x0_shift``
    (``x0 - r0(1)``); with neither the initial point is ``r0(1)``.
    """
    if a is None:
        a = Configuration.zeros(system)
    elif not isinstance(a, Configuration):
        a = project_com(a, system)
    partition = cluster_partition(a, tol_cluster)
    found = _classify(partition, a)
    if regime is not None and Regime(regime) != found:
        raise RegimeMismatch(f"velocity gives {found.value}, not {Regime(regime).value}")
    configs = find_cluster_ccs(system, partition, cc_seeds, cc_rng_seed, threads)
    beta_b = np.zeros((system.n, system.dim))
    for k, res in configs.items():
        beta_b[list(partition.clusters[k])] = res.beta * res.b.coords
    beta_b.setflags(write=False)
    r01 = a.coords + beta_b
    if x0 is None:
        shift = np.zeros_like(r01) if x0_shift is None else _arr(x0_shift)
        x0 = project_com(r01 + shift, system)
    elif x0_shift is not None:
        raise ValueError("give x0 or x0_shift, not both")
    elif not isinstance(x0, Configuration):
        x0 = project_com(x0, system)
    return ReferenceMotion(found, a, partition, configs, x0, beta_b)


def _arr(x):
    return x.coords if isinstance(x, Configuration) else np.asarray(x, float)
