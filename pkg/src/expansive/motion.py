"""Positions, velocities and energies read off a discrete path."""
import numpy as np

from .core import pair_gradient, pair_potential, pair_vectors


def positions(ref, path):
    """``x(t_k) = r0(t_k) + phi_k + x0_shift`` at every node."""
    return ref.r0(path.grid.nodes) + path.values + ref.x0_shift.coords


def velocities(ref, path):
    """Velocities at the nodes.

    Interior nodes use the three-point difference on the nonuniform grid.
    The first node uses the discrete Legendre transform of the first cell
    (the momentum conjugate to the pinned endpoint), the last node a
    one-sided three-point difference.  All are second order.
    """
    t = path.grid.nodes
    h = path.grid.widths
    phi = np.asarray(path.values)
    v = np.empty_like(phi)
    hm, hp = h[:-1, None, None], h[1:, None, None]
    v[1:-1] = (hm**2 * phi[2:] + (hp**2 - hm**2) * phi[1:-1] - hp**2 * phi[:-2]) \
        / (hm * hp * (hm + hp))
    v[0] = initial_phi_velocity(ref, path)
    a, b = h[-2], h[-1]
    v[-1] = (phi[-3] * b / (a * (a + b)) - phi[-2] * (a + b) / (a * b)
             + phi[-1] * (a + 2 * b) / (b * (a + b)))
    return v + ref.r0_dot(t)


def initial_phi_velocity(ref, path):
    """phi'(1) from the discrete Legendre transform of the first cell."""
    sys = path.system
    h0 = path.grid.widths[0]
    tm = path.grid.midpoints[0]
    phi = np.asarray(path.values)
    xm = ref.r0(tm) + 0.5 * (phi[0] + phi[1]) + ref.x0_shift.coords
    force = pair_gradient(sys, xm) - sys.masses[:, None] * ref.r0_ddot(tm)
    p = sys.masses[:, None] * (phi[1] - phi[0]) / h0 - 0.5 * h0 * force
    return p / sys.masses[:, None]


def node_energies(ref, path, x=None, v=None):
    sys = path.system
    x = positions(ref, path) if x is None else x
    v = velocities(ref, path) if v is None else v
    kin = 0.5 * np.einsum("i,kid,kid->k", sys.masses, v, v)
    return kin - pair_potential(sys, x)


def expected_energy(ref):
    """``|a|_M^2 / 2``; zero in the parabolic regime."""
    a = ref.a.coords
    return 0.5 * float(np.einsum("i,id,id->", ref.system.masses, a, a))


def min_separation(ref, path, t_from=1.0):
    """Smallest pairwise distance at nodes with ``t >= t_from``: (value, t)."""
    x = positions(ref, path)
    t = path.grid.nodes
    keep = t >= t_from
    dist = np.linalg.norm(pair_vectors(path.system, x[keep]), axis=-1).min(axis=1)
    k = int(np.argmin(dist))
    return float(dist[k]), float(t[keep][k])
