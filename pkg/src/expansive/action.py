"""Discrete renormalized action on a graded grid.

The perturbation is piecewise linear.  Per cell the kinetic term is exact
and the potential and correction terms use the midpoint rule, so the
discrete functional is a second-order variational integrator.

Beyond ``T_max`` the path is frozen at its last value.  The integral of the
frozen tail is evaluated (Gauss-Legendre after ``t = T u^-3``, which turns
the algebraic decay into a smooth integrand) together with a quadratic
correction for the slowly growing modes inside parabolic clusters.  Without
these far-field terms the last node would see a spurious ``phi' = 0``
boundary condition.  Pass ``far_field=False`` to get the bare truncation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import pair_vectors, scatter_pairs
from .errors import CollisionError, RegimeMismatch
from .central import Regime

_TAIL_X, _TAIL_W = np.polynomial.legendre.leggauss(32)


@dataclass(frozen=True)
class ActionBreakdown:
    kinetic: float
    potential_diff: float
    correction: float
    tail: float
    tail_bound: float
    total: float
    pairs: dict = field(default_factory=dict, repr=False)
    clusters: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {"kinetic": self.kinetic, "potential_diff": self.potential_diff,
                "correction": self.correction, "tail": self.tail,
                "tail_bound": self.tail_bound, "total": self.total,
                "clusters": self.clusters}


def _check_partition(ref):
    part = ref.partition
    a = ref.a.coords
    for c in part.clusters:
        if np.ptp(a[list(c)], axis=0).max(initial=0.0) > 10 * part.tol_cluster:
            raise RegimeMismatch("partition inconsistent with the velocity a")
    lab = part.labels
    i, j = ref.system.pairs
    inter = lab[i] != lab[j]
    if np.any(np.linalg.norm(a[i[inter]] - a[j[inter]], axis=-1) <= part.tol_cluster):
        raise RegimeMismatch("bodies with equal velocity in different clusters")


class DiscreteAction:
    """Value and gradient of the discrete action for one reference and grid.

    ``guard`` is the relative separation (times ``scale t^(2/3)``) below which
    a configuration counts as colliding.
    """

    def __init__(self, ref, grid, far_field=True, guard=1e-14):
        _check_partition(ref)
        sys = ref.system
        self.ref, self.grid, self.sys = ref, grid, sys
        self.far_field = far_field
        self.h = grid.widths
        self.tm = grid.midpoints
        self.T = grid.T_max
        self.mm = sys.pair_masses
        self.intra = ref.partition.intra_mask
        self.xt = ref.x0_shift.coords
        x0 = ref.x0.coords
        self.scale = float(np.sqrt(np.einsum("i,id,id->", sys.masses, x0, x0)
                                   / sys.total_mass)) or 1.0
        self.guard = guard

        # per-pair coefficient of the intra-cluster correction
        coef = np.zeros((len(self.mm), sys.dim))
        bb = pair_vectors(sys, ref.beta_b)
        for k in ref.partition.nontrivial:
            mk = ref.partition.cluster_mass(k)
            members = np.array(ref.partition.clusters[k])
            i, j = sys.pairs
            sel = np.isin(i, members) & np.isin(j, members)
            coef[sel] = (2.0 / 9.0) / mk * self.mm[sel, None] * bb[sel]
        self.coef = coef

        self.cells = self._setup(self.tm, self.h)
        u = 0.5 * (_TAIL_X + 1.0)
        self.tail_nodes = self.T / u**3
        self.tail = self._setup(self.tail_nodes, 1.5 * self.T * _TAIL_W / u**4)
        if far_field and ref.regime != Regime.HYPERBOLIC:
            self.S = ref.far_field
        else:
            self.S = None

    def _setup(self, t, w):
        ref, sys = self.ref, self.sys
        bb = pair_vectors(sys, ref.beta_b)
        ap = pair_vectors(sys, ref.a.coords)
        tt = t[:, None, None]
        intra = self.intra[None, :, None]
        # r0_ij - d0_ij split exactly, avoiding cancellation at large t
        d0 = np.where(intra, bb * np.cbrt(tt) ** 2, ap * tt)
        e0 = np.where(intra, ap * tt, bb * np.cbrt(tt) ** 2) + pair_vectors(sys, self.xt)
        return {
            "t": t, "w": w, "d0": d0, "d0n": np.linalg.norm(d0, axis=-1),
            "e0": e0, "cw": w / np.cbrt(t) ** 4,
            "floor": self.guard * self.scale * np.cbrt(t) ** 2,
        }

    # -- pieces ------------------------------------------------------------

    def _potential(self, c, pv):
        """Per-pair potential difference density and pair vectors ``d``."""
        e = c["e0"] + pv
        d = c["d0"] + e
        dn = np.linalg.norm(d, axis=-1)
        d0n = c["d0n"]
        num = np.einsum("...d,...d->...", e, 2.0 * c["d0"] + e)
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = -self.mm * num / (dn * d0n * (dn + d0n))
        return dens, d, dn

    def _collides(self, c, dn):
        bad = dn < c["floor"][:, None]
        return bad if np.any(bad) else None

    def _raise(self, c, bad):
        k, p = np.argwhere(bad)[0]
        i, j = self.sys.pairs
        raise CollisionError(
            f"bodies {i[p] + 1} and {j[p] + 1} collide near t={c['t'][k]:.6g}",
            pair=(int(i[p]), int(j[p])), t=float(c["t"][k]))

    def _terms(self, phi, strict):
        mid = 0.5 * (phi[:-1] + phi[1:])
        pv = pair_vectors(self.sys, mid)
        c = self.cells
        dens, d, dn = self._potential(c, pv)
        bad = self._collides(c, dn)
        if bad is not None:
            if strict:
                self._raise(c, bad)
            return None
        corr = np.einsum("pd,kpd->kp", self.coef, pv)
        dphi = np.diff(phi, axis=0)
        kin = np.einsum("i,kid,kid->k", self.sys.masses, dphi, dphi) / (2 * self.h)
        out = {"mid": (dens, corr, d, dn, pv, dphi, kin)}
        if self.far_field:
            t = self.tail
            pvT = pair_vectors(self.sys, phi[-1])[None]
            tdens, td, tdn = self._potential(t, pvT)
            tbad = self._collides(t, tdn)
            if tbad is not None:
                if strict:
                    self._raise(t, tbad)
                return None
            tcorr = np.einsum("pd,pd->p", self.coef, pvT[0])
            out["tail"] = (tdens, tcorr, td, tdn)
        return out

    def _modal(self, phi_T):
        if self.S is None:
            return 0.0, None
        w = (phi_T + self.xt).ravel()
        sw = self.S @ w
        return -0.5 * float(w @ sw) / self.T, -sw / self.T

    # -- public ------------------------------------------------------------

    def value(self, phi):
        """Total discrete action, or ``inf`` when a collision guard trips."""
        terms = self._terms(phi, strict=False)
        if terms is None:
            return np.inf
        dens, corr, _, _, _, _, kin = terms["mid"]
        total = float(np.sum(kin) + self.h @ dens.sum(axis=1)
                      + self.cells["cw"] @ corr.sum(axis=1))
        if self.far_field:
            tdens, tcorr, _, _ = terms["tail"]
            t = self.tail
            total += float(t["w"] @ tdens.sum(axis=1) + t["cw"].sum() * tcorr.sum())
            total += self._modal(phi[-1])[0]
        return total if np.isfinite(total) else np.inf

    def gradient(self, phi):
        """Gradient over nodes ``1..n``, each block summing to zero over bodies."""
        terms = self._terms(phi, strict=True)
        _, _, d, dn, _, dphi, _ = terms["mid"]
        sys = self.sys
        m = sys.masses[:, None]
        c = self.cells
        f = -(self.mm / dn**3)[..., None] * d * c["w"][:, None, None]
        f = f + self.coef[None] * c["cw"][:, None, None]
        gmid = scatter_pairs(sys, f)
        g = np.zeros_like(phi)
        g[:-1] += 0.5 * gmid
        g[1:] += 0.5 * gmid
        vel = m * dphi / self.h[:, None, None]
        g[:-1] -= vel
        g[1:] += vel
        if self.far_field:
            _, _, td, tdn = terms["tail"]
            t = self.tail
            ft = -(self.mm / tdn**3)[..., None] * td * t["w"][:, None, None]
            g[-1] += scatter_pairs(sys, ft.sum(axis=0))
            g[-1] += scatter_pairs(sys, self.coef * t["cw"].sum())
            _, gq = self._modal(phi[-1])
            if gq is not None:
                g[-1] += gq.reshape(sys.n, sys.dim)
        g = g[1:]
        return g - g.sum(axis=1, keepdims=True) * (sys.masses / sys.total_mass)[:, None]

    def cell_action(self, phi):
        """Per-cell contributions on ``[1, T_max]`` (no far field); None on collision."""
        terms = self._terms(phi, strict=False)
        if terms is None:
            return None
        dens, corr, _, _, _, _, kin = terms["mid"]
        return kin + self.h * dens.sum(axis=1) + self.cells["cw"] * corr.sum(axis=1)

    def breakdown(self, phi):
        terms = self._terms(phi, strict=True)
        dens, corr, _, _, pv, dphi, kin = terms["mid"]
        sys = self.sys
        c = self.cells
        kinetic = float(np.sum(kin))
        pot = float(self.h @ dens.sum(axis=1))
        cor = float(c["cw"] @ corr.sum(axis=1))
        tail = 0.0
        if self.far_field:
            tdens, tcorr, _, _ = terms["tail"]
            t = self.tail
            tail = float(t["w"] @ tdens.sum(axis=1) + t["cw"].sum() * tcorr.sum())
            tail += self._modal(phi[-1])[0]

        # crude estimate of what lies beyond T_max, from the last cell
        dens_last = kin[-1] / self.h[-1] + dens[-1].sum() \
            + corr[-1].sum() / np.cbrt(self.tm[-1]) ** 4
        tl = self.tm[-1]
        if self.ref.regime == Regime.HYPERBOLIC:
            bound = abs(dens_last) * tl**2 / self.T
        else:
            bound = 6.0 * abs(dens_last) * tl ** (7 / 6) * self.T ** (-1 / 6)

        dpv = pair_vectors(sys, dphi)
        kin_p = (self.mm / (2 * sys.total_mass)) * np.einsum(
            "kpd,kpd,k->p", dpv, dpv, 1.0 / self.h)
        pot_p = self.h @ dens
        cor_p = c["cw"] @ corr
        i, j = sys.pairs
        pairs = {(int(a), int(b)): (float(x), float(y), float(z))
                 for a, b, x, y, z in zip(i, j, kin_p, pot_p, cor_p)}
        lab = self.ref.partition.labels
        clusters = {}
        for p, (a, b) in enumerate(zip(i, j)):
            key = f"{min(lab[a], lab[b]) + 1}-{max(lab[a], lab[b]) + 1}"
            clusters[key] = clusters.get(key, 0.0) + kin_p[p] + pot_p[p] + cor_p[p]
        return ActionBreakdown(
            kinetic=kinetic, potential_diff=pot, correction=cor, tail=tail,
            tail_bound=float(bound), total=kinetic + pot + cor + tail,
            pairs=pairs, clusters={k: float(v) for k, v in sorted(clusters.items())})


def action_eval(ref, path, far_field=True):
    """Renormalized action of ``path`` with its breakdown."""
    return DiscreteAction(ref, path.grid, far_field).breakdown(np.asarray(path.values))


def action_gradient(ref, path, far_field=True):
    """Gradient of the discrete action with respect to nodes ``1..n``."""
    return DiscreteAction(ref, path.grid, far_field).gradient(np.asarray(path.values))
