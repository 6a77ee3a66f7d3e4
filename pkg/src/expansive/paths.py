"""Time grids, piecewise-linear perturbation paths and trajectory tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import MassSystem, project_array


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray
    grading: str = "powerlaw"
    param: float = 1.0

    def __post_init__(self):
        t = np.array(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 3:
            raise ValueError("grid needs at least three nodes")
        if t[0] != 1.0:
            raise ValueError("first node must be exactly 1")
        if not np.all(np.diff(t) > 0):
            raise ValueError("nodes must be strictly increasing")
        if t[-1] < 10:
            raise ValueError("T_max must be >= 10")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @classmethod
    def power_law(cls, T_max=1e4, n=512, exponent=1.0):
        """``t_k = T_max^((k/n)^exponent)``; exponent 1 gives log spacing."""
        s = (np.arange(n + 1) / n) ** exponent
        t = np.exp(s * np.log(T_max))
        t[0], t[-1] = 1.0, T_max
        return cls(t, "powerlaw", float(exponent))

    @classmethod
    def geometric(cls, T_max=1e4, n=512, ratio=1.01):
        """Cell widths grow by the constant factor ``ratio``."""
        w = ratio ** np.arange(n)
        t = 1.0 + (T_max - 1.0) * np.concatenate([[0.0], np.cumsum(w)]) / w.sum()
        t[0], t[-1] = 1.0, T_max
        return cls(t, "geometric", float(ratio))

    @property
    def n(self):
        return self.nodes.size - 1

    @property
    def T_max(self):
        return float(self.nodes[-1])

    @property
    def widths(self):
        return np.diff(self.nodes)

    @property
    def midpoints(self):
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def refined(self):
        """Same grid with every cell split at its midpoint."""
        t = np.empty(2 * self.n + 1)
        t[0::2] = self.nodes
        t[1::2] = self.midpoints
        return TimeGrid(t, self.grading, self.param)

    def to_dict(self):
        return {"T_max": self.T_max, "nodes": self.n,
                "grading": self.grading, "param": self.param}


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """Nodal values ``(n+1, N, d)`` of the perturbation; node 0 is zero."""

    grid: TimeGrid
    values: np.ndarray
    system: MassSystem

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        shape = (self.grid.n + 1, self.system.n, self.system.dim)
        if v.shape != shape:
            raise ValueError(f"values shape {v.shape} != {shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite path values")
        v = project_array(v, self.system.masses)
        v[0] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid, system):
        return cls(grid, np.zeros((grid.n + 1, system.n, system.dim)), system)

    def with_values(self, values):
        return DiscretePath(self.grid, values, self.system)


def path_norm(path):
    """Discrete D-norm ``sqrt(sum |dphi|_M^2 / dt)``."""
    d = np.diff(path.values, axis=0)
    return float(np.sqrt(np.einsum("i,kid,kid,k->", path.system.masses, d, d,
                                   1.0 / path.grid.widths)))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)


def hardy_check(path):
    """Compare ``int |phi|_M^2 / t^2`` on the grid with ``4 |phi|_D^2``."""
    t, h = path.grid.nodes, path.grid.widths
    s = 0.5 * (_GL_X + 1.0)
    v0, v1 = path.values[:-1], path.values[1:]
    m = path.system.masses
    a = np.einsum("i,kid,kid->k", m, v0, v0)
    b = np.einsum("i,kid,kid->k", m, v0, v1 - v0)
    c = np.einsum("i,kid,kid->k", m, v1 - v0, v1 - v0)
    sq = a[:, None] + 2 * b[:, None] * s + c[:, None] * s**2
    tq = t[:-1, None] + h[:, None] * s
    lhs = float(np.sum(0.5 * h * np.sum(_GL_W * sq / tq**2, axis=1)))
    rhs = 4.0 * path_norm(path) ** 2
    return lhs, rhs, bool(lhs <= rhs * (1 + 1e-9))


def sup_bound(path):
    """``max_k |phi(t_k)|_M^2 / (t_k - 1)`` (at most ``|phi|_D^2``)."""
    t = path.grid.nodes[1:]
    sq = np.einsum("i,kid,kid->k", path.system.masses, path.values[1:],
                   path.values[1:])
    return float(np.max(sq / (t - 1.0)))


def path_resample(path, new_grid):
    """Linear interpolation onto ``new_grid``, constant beyond the old end."""
    if np.array_equal(new_grid.nodes, path.grid.nodes):
        return path
    old = path.values.reshape(path.grid.n + 1, -1)
    new = np.empty((new_grid.n + 1, old.shape[1]))
    for c in range(old.shape[1]):
        new[:, c] = np.interp(new_grid.nodes, path.grid.nodes, old[:, c])
    new = new.reshape(new_grid.n + 1, path.system.n, path.system.dim)
    return DiscretePath(new_grid, new, path.system)


# -- tables -----------------------------------------------------------------

def column_names(n, dim):
    axes = "xyz" if dim <= 3 else [f"q{k + 1}" for k in range(dim)]
    return ["t"] + [f"body{i + 1}_{axes[c]}" for i in range(n) for c in range(dim)]


def write_table(fh, times, values, header=None):
    """Write ``t`` and flattened ``(K, N, d)`` values with 17 digits."""
    values = np.asarray(values, dtype=float)
    k, n, d = values.shape
    fh.write(",".join(header or column_names(n, d)) + "\n")
    rows = np.column_stack([np.asarray(times, float), values.reshape(k, -1)])
    for row in rows:
        fh.write(",".join(format(x, ".17g") for x in row) + "\n")


def read_table(fh, dim):
    """Inverse of :func:`write_table`; returns ``(t, values, header)``."""
    reader = csv.reader(fh)
    header = next(reader)
    rows = np.array([[float(x) for x in r] for r in reader if r])
    if rows.ndim != 2 or rows.shape[1] != len(header):
        raise ValueError("malformed table")
    ncols = rows.shape[1] - 1
    if ncols % dim:
        raise ValueError(f"{ncols} coordinate columns not divisible by dim {dim}")
    return rows[:, 0], rows[:, 1:].reshape(len(rows), ncols // dim, dim), header


def table_string(times, values):
    buf = io.StringIO()
    write_table(buf, times, values)
    return buf.getvalue()
