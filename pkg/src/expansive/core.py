"""Mass geometry, the Newtonian potential and cluster partitions.

Configurations are stored as full ``N x d`` arrays; the zero center of mass
constraint is kept by projection.  The array kernels at the bottom of the
module (``pair_*``) accept arbitrary leading batch axes and are what the
action and the integrators call in their inner loops.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (ChainingAmbiguity, CollisionError, DegenerateSystem,
                     DimensionMismatch)


@dataclass(frozen=True, eq=False)
class MassSystem:
    """Point masses in ``dim`` dimensions (G = 1 absorbed into the masses)."""

    masses: np.ndarray
    dim: int = 2

    def __post_init__(self):
        m = np.array(self.masses, dtype=float).ravel()
        if m.size < 2:
            raise DegenerateSystem("need at least two bodies")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise DegenerateSystem("masses must be finite and positive")
        if int(self.dim) != self.dim or self.dim < 2:
            raise DegenerateSystem("dimension must be an integer >= 2")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def n(self):
        return self.masses.size

    @property
    def total_mass(self):
        return float(np.sum(self.masses))

    @cached_property
    def pairs(self):
        """Index arrays ``(i, j)`` over all pairs ``i < j``."""
        i, j = np.triu_indices(self.n, k=1)
        return i, j

    @cached_property
    def pair_masses(self):
        i, j = self.pairs
        return self.masses[i] * self.masses[j]

    @cached_property
    def incidence(self):
        """``P x N`` matrix with +1 at body i and -1 at body j of each pair."""
        i, j = self.pairs
        e = np.zeros((i.size, self.n))
        e[np.arange(i.size), i] = 1.0
        e[np.arange(i.size), j] = -1.0
        return e

    def subsystem(self, indices):
        return MassSystem(self.masses[list(indices)], self.dim)

    def same_as(self, other):
        return (self is other or (self.dim == other.dim
                and np.array_equal(self.masses, other.masses)))


def _rms(coords):
    return float(np.sqrt(np.mean(np.square(coords)))) if coords.size else 0.0


@dataclass(frozen=True, eq=False)
class Configuration:
    """A point of the zero-barycenter configuration space.

    ``atol_com`` defaults to ``1e-12 * M * rms(coords)``.
    """

    coords: np.ndarray
    system: MassSystem
    atol_com: float | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        sys = self.system
        if c.shape != (sys.n, sys.dim):
            raise DimensionMismatch(
                f"coords shape {c.shape} != ({sys.n}, {sys.dim})")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coordinates")
        tol = self.atol_com
        if tol is None:
            tol = 1e-12 * sys.total_mass * max(_rms(c), 1e-300)
        com = np.linalg.norm(sys.masses @ c)
        if com > tol:
            raise ValueError(f"center of mass {com:.3e} exceeds {tol:.3e}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def zeros(cls, system):
        return cls(np.zeros((system.n, system.dim)), system)

    def __add__(self, other):
        return project_com(self.coords + _coords(other), self.system)

    def __sub__(self, other):
        return project_com(self.coords - _coords(other), self.system)

    def scaled(self, s):
        return Configuration(s * self.coords, self.system)


def _coords(x):
    return x.coords if isinstance(x, Configuration) else np.asarray(x, float)


def _system_of(*objs, system=None):
    for o in objs:
        if isinstance(o, Configuration):
            if system is not None and not system.same_as(o.system):
                raise DimensionMismatch("configurations from different systems")
            system = o.system
    if system is None:
        raise TypeError("a MassSystem is needed for plain arrays")
    return system


def project_com(raw, sys):
    """Subtract the mass-weighted barycenter from every row."""
    z = np.array(raw, dtype=float)
    if z.shape != (sys.n, sys.dim):
        raise DimensionMismatch(f"shape {z.shape} != ({sys.n}, {sys.dim})")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite input")
    z = z - (sys.masses @ z) / sys.total_mass
    return Configuration(z, sys)


def project_array(z, masses):
    """Barycenter projection for arrays with leading batch axes."""
    bary = np.einsum("i,...id->...d", masses, z) / masses.sum()
    return z - bary[..., None, :]


def mass_inner(x, y, system=None):
    """Mass scalar product ``sum_i m_i <r_i, s_i>``."""
    sys = _system_of(x, y, system=system)
    a, b = _coords(x), _coords(y)
    if a.shape != (sys.n, sys.dim) or b.shape != a.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape}")
    return float(np.einsum("i,id,id->", sys.masses, a, b))


def mass_norm(x, system=None):
    return float(np.sqrt(mass_inner(x, x, system)))


def _collision_eps(coords, collision_eps):
    if collision_eps is not None:
        return collision_eps
    return 1e-14 * max(_rms(coords), 1e-300)


def _checked_pairs(x, collision_eps=None, t=None):
    c = x.coords
    i, j = x.system.pairs
    diff = c[i] - c[j]
    dist = np.linalg.norm(diff, axis=-1)
    k = int(np.argmin(dist))
    if dist[k] < _collision_eps(c, collision_eps):
        raise CollisionError(f"bodies {i[k]} and {j[k]} collide",
                             pair=(int(i[k]), int(j[k])), t=t)
    return diff, dist


def potential(x, collision_eps=None):
    """Newtonian potential ``U(x) = sum_{i<j} m_i m_j / |r_i - r_j|``."""
    _, dist = _checked_pairs(x, collision_eps)
    return float(np.sum(x.system.pair_masses / dist))


def potential_gradient(x, collision_eps=None):
    diff, dist = _checked_pairs(x, collision_eps)
    f = (x.system.pair_masses / dist**3)[:, None] * diff
    return -x.system.incidence.T @ f


def hessian_apply(x, v, collision_eps=None):
    """Action of the Hessian of U at ``x`` on the ``N x d`` array ``v``."""
    sys = x.system
    v = np.asarray(v, dtype=float)
    if v.shape != (sys.n, sys.dim):
        raise DimensionMismatch(f"shape {v.shape} != ({sys.n}, {sys.dim})")
    diff, dist = _checked_pairs(x, collision_eps)
    return pair_hessian_apply(sys, diff, dist, v)


def pair_hessian_apply(sys, diff, dist, v):
    i, j = sys.pairs
    dv = v[..., i, :] - v[..., j, :]
    mm = sys.pair_masses
    proj = np.einsum("...pd,...pd->...p", diff, dv)
    blk = (mm * (3.0 * proj / dist**5))[..., None] * diff \
        - (mm / dist**3)[..., None] * dv
    return np.einsum("pn,...pd->...nd", sys.incidence, blk)


def hessian_matrix(x):
    """Dense ``Nd x Nd`` Hessian (row-major body/axis ordering)."""
    sys = x.system
    k = sys.n * sys.dim
    basis = np.eye(k).reshape(k, sys.n, sys.dim)
    diff, dist = _checked_pairs(x)
    cols = pair_hessian_apply(sys, diff[None], dist[None], basis)
    return cols.reshape(k, k).T


def separations(x):
    c = x.coords
    i, j = x.system.pairs
    dist = np.linalg.norm(c[i] - c[j], axis=-1)
    return float(dist.min()), float(dist.max())


def energy(x, v):
    """Mechanical energy ``1/2 |v|_M^2 - U(x)``."""
    return 0.5 * mass_inner(v, v, x.system) - potential(x)


# -- batched kernels --------------------------------------------------------

def pair_vectors(sys, z):
    i, j = sys.pairs
    return z[..., i, :] - z[..., j, :]


def pair_potential(sys, z):
    """U over leading batch axes of ``z`` with shape ``(..., N, d)``."""
    dist = np.linalg.norm(pair_vectors(sys, z), axis=-1)
    return np.sum(sys.pair_masses / dist, axis=-1)


def pair_gradient(sys, z):
    diff = pair_vectors(sys, z)
    dist = np.linalg.norm(diff, axis=-1)
    f = (sys.pair_masses / dist**3)[..., None] * diff
    return -np.einsum("pn,...pd->...nd", sys.incidence, f)


def scatter_pairs(sys, f):
    """Map per-pair vectors on body i (and minus on body j) to bodies."""
    return np.einsum("pn,...pd->...nd", sys.incidence, f)


# -- cluster partitions -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClusterPartition:
    """Bodies grouped by equal asymptotic velocity (zero-based indices)."""

    clusters: tuple
    source_velocity: Configuration
    tol_cluster: float

    def __post_init__(self):
        n = self.source_velocity.system.n
        flat = sorted(i for c in self.clusters for i in c)
        if flat != list(range(n)):
            raise ValueError("clusters must partition the bodies")

    @cached_property
    def labels(self):
        lab = np.empty(self.source_velocity.system.n, dtype=int)
        for k, c in enumerate(self.clusters):
            lab[list(c)] = k
        return lab

    @property
    def all_singletons(self):
        return all(len(c) == 1 for c in self.clusters)

    @property
    def nontrivial(self):
        return [k for k, c in enumerate(self.clusters) if len(c) > 1]

    def cluster_mass(self, k):
        return float(self.source_velocity.system.masses[list(self.clusters[k])].sum())

    @cached_property
    def intra_mask(self):
        """Boolean mask over pairs: True when both bodies share a cluster."""
        i, j = self.source_velocity.system.pairs
        return self.labels[i] == self.labels[j]


def cluster_partition(a, tol_cluster=1e-9):
    """Partition bodies by the transitive closure of ``|a_i - a_j| <= tol``."""
    if not tol_cluster > 0:
        raise ValueError("tol_cluster must be positive")
    c = a.coords
    n = c.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    dist = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i, j] <= tol_cluster:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    clusters = tuple(sorted(tuple(g) for g in groups.values()))
    for g in clusters:
        sub = dist[np.ix_(g, g)]
        if sub.max() > 10 * tol_cluster:
            raise ChainingAmbiguity(
                f"cluster {[i + 1 for i in g]} chains velocities "
                f"{sub.max():.3e} apart (tol {tol_cluster:.1e})")
    return ClusterPartition(clusters, a, float(tol_cluster))
