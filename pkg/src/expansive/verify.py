"""Independent checks of a solved path: ODE and Kepler cross-integration,
energy, asymptotic fits and the free-time spot check."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .action import DiscreteAction
from .central import Regime
from .core import pair_gradient, pair_potential, project_array
from .errors import IntegratorFailure, RegimeMismatch
from .kepler import kepler_oracle
from .motion import expected_energy, positions, velocities

_GL4_X, _GL4_W = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True)
class FitResult:
    model: str
    coefficients: dict
    exponent: float | None
    window: tuple
    rms_residual: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise ValueError("empty fit window")

    def to_dict(self):
        def plain(v):
            return v.tolist() if isinstance(v, np.ndarray) else v
        return {"model": self.model,
                "coefficients": {k: plain(v) for k, v in self.coefficients.items()},
                "exponent": self.exponent, "window": list(self.window),
                "rms_residual": self.rms_residual,
                "extra": {k: plain(v) for k, v in self.extra.items()}}


def _mnorm(masses, z):
    return np.sqrt(np.einsum("i,...id,...id->...", masses, z, z))


# -- integration ------------------------------------------------------------

def integrate(system, x, v, t0, times, rtol=1e-12):
    """Integrate Newton's equations from ``(x, v)`` at ``t0``; states at ``times``."""
    m = system.masses[:, None]
    shape = (system.n, system.dim)
    k = system.n * system.dim

    def rhs(_, y):
        q = y[:k].reshape(shape)
        return np.concatenate([y[k:], (pair_gradient(system, q) / m).ravel()])

    scale = float(np.max(np.abs(x))) + 1.0
    y0 = np.concatenate([np.ravel(x), np.ravel(v)])
    times = np.asarray(times, dtype=float)
    sol = solve_ivp(rhs, (t0, times[-1]), y0, method="DOP853", t_eval=times,
                    rtol=rtol, atol=rtol * scale)
    if sol.status != 0:
        raise IntegratorFailure(sol.message)
    y = sol.y.T
    return y[:, :k].reshape(-1, *shape), y[:, k:].reshape(-1, *shape)


def ode_crosscheck(ref, report, t_start=2.0, t_end=100.0):
    """Largest relative M-norm gap between the path and an ODE solution
    started from the path's own state at the first node >= ``t_start``."""
    t = report.path.grid.nodes
    if not 1.0 < t_start < t_end <= t[-1]:
        raise ValueError("window must satisfy 1 < t_start < t_end <= T_max")
    x = positions(ref, report.path)
    v = velocities(ref, report.path)
    k0 = int(np.searchsorted(t, t_start))
    sel = np.arange(k0, np.searchsorted(t, t_end, side="right"))
    xs, _ = integrate(ref.system, x[k0], v[k0], t[k0], t[sel])
    m = ref.system.masses
    err = _mnorm(m, xs - x[sel]) / (1.0 + _mnorm(m, x[sel]))
    return float(err.max())


def kepler_crosscheck(ref, report, t_lo=2.0, t_hi=1e3):
    """Relative position error against the two-body Kepler solution sharing
    the path's state at ``t = 1``; returns ``(max_rel_err, times, errors)``."""
    sys = ref.system
    if sys.n != 2:
        raise ValueError("the Kepler comparison needs exactly two bodies")
    t = report.path.grid.nodes
    x = positions(ref, report.path)
    v = velocities(ref, report.path)
    m1, m2 = sys.masses
    xr, vr = x[0, 0] - x[0, 1], v[0, 0] - v[0, 1]
    sel = np.flatnonzero((t >= t_lo) & (t <= t_hi))
    errs = []
    for k in sel:
        xk, _ = kepler_oracle(m1, m2, xr, vr, t[k] - 1.0)
        full = np.array([m2 * xk, -m1 * xk]) / (m1 + m2)
        errs.append(_mnorm(sys.masses, full - x[k]) / _mnorm(sys.masses, x[k]))
    errs = np.array(errs)
    return float(errs.max()), t[sel], errs


def energy_check(ref, report, window=None, samples=16):
    """Mean energy of ODE states over a log-spaced sample.

    The ODE starts from the path state at the first node of ``window``
    (default ``[T_max/100, T_max/10]``).
    """
    sys = ref.system
    t = report.path.grid.nodes
    T = t[-1]
    lo, hi = window or (max(T / 100, 2.0), T / 10)
    k0 = int(np.searchsorted(t, lo))
    x = positions(ref, report.path)
    v = velocities(ref, report.path)
    times = np.geomspace(t[k0], hi, samples)
    xs, vs = integrate(sys, x[k0], v[k0], t[k0], times)
    e = 0.5 * np.einsum("i,kid,kid->k", sys.masses, vs, vs) - pair_potential(sys, xs)
    h = float(np.mean(e))
    h0 = expected_energy(ref)
    return h, h0, abs(h - h0)


# -- fits -------------------------------------------------------------------

def _window(report, window_fraction):
    t = report.path.grid.nodes
    T = t[-1]
    sel = t >= window_fraction * T
    return t, sel, (float(window_fraction * T), float(T))


def fit_log_term(t, y):
    """Least squares ``y ~ c1 log t + c0`` per trailing component."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.column_stack([np.log(t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, y.reshape(len(t), -1), rcond=None)
    resid = y.reshape(len(t), -1) - A @ coef
    tail = y.shape[1:]
    return (coef[0].reshape(tail), coef[1].reshape(tail),
            float(np.sqrt(np.mean(resid**2))))


def _rel(fit, pred):
    scale = np.linalg.norm(pred)
    diff = np.linalg.norm(fit - pred)
    return float(diff / scale) if scale > 0 else float(diff)


def chazy_fit(report, ref, window_fraction=0.1):
    """Fit ``x(t) - a t = c1 log t + c0`` and compare ``c1`` with the two
    candidate predictions ``-M^-1 grad U(a)`` and ``-grad U(a)``."""
    if ref.regime != Regime.HYPERBOLIC:
        raise RegimeMismatch("the log expansion fit needs the hyperbolic regime")
    t, sel, win = _window(report, window_fraction)
    x = positions(ref, report.path)
    y = x[sel] - ref.a.coords * t[sel, None, None]
    c1, c0, rms = fit_log_term(t[sel], y)
    g = pair_gradient(ref.system, ref.a.coords)
    preds = {"mass_weighted": -g / ref.system.masses[:, None], "literal": -g}
    errs = {k: _rel(c1, p) for k, p in preds.items()}
    best = min(errs, key=errs.get)
    return FitResult("chazy", {"c1": c1, "c0": c0}, None, win, rms, {
        "predicted_" + k: p for k, p in preds.items()} | {
        "rel_err_" + k: e for k, e in errs.items()} | {"best": best,
                                                        "rel_err": errs[best]})


def _loglog(t, r):
    A = np.column_stack([np.log(t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, np.log(r), rcond=None)
    rms = float(np.sqrt(np.mean((np.log(r) - A @ coef) ** 2)))
    return float(coef[0]), float(coef[1]), rms


def growth_fit(report, ref, pair, window_fraction=0.1):
    """Log-log slope of the distance between bodies ``pair`` (zero-based)."""
    i, j = pair
    t, sel, win = _window(report, window_fraction)
    x = positions(ref, report.path)[sel]
    r = np.linalg.norm(x[:, i] - x[:, j], axis=-1)
    slope, icpt, rms = _loglog(t[sel], r)
    lab = ref.partition.labels
    kind = "intra" if lab[i] == lab[j] else "inter"
    return FitResult("growth", {"log_prefactor": icpt}, slope, win, rms,
                     {"pair": [int(i), int(j)], "kind": kind})


def growth_targets(ref):
    """Expected exponent and tolerance per pair kind for the regime."""
    if ref.regime == Regime.HYPERBOLIC:
        return {"inter": (1.0, 0.01)}
    if ref.regime == Regime.PARABOLIC:
        return {"intra": (2 / 3, 0.01)}
    return {"intra": (2 / 3, 0.02), "inter": (1.0, 0.01)}


def remainder_fit(report, ref, epsilons=(0.05,), window_fraction=0.1):
    """``c(eps) = max_k |phi(t_k)|_M / t_k^(1/3 + eps)`` and the last-decade slope."""
    if ref.regime == Regime.HYPERBOLIC:
        raise RegimeMismatch("remainder bound applies to parabolic clusters")
    t = report.path.grid.nodes
    nrm = _mnorm(ref.system.masses, np.asarray(report.path.values))
    coefs, where, interior = {}, {}, {}
    for eps in epsilons:
        q = nrm[1:] / t[1:] ** (1 / 3 + eps)
        k = int(np.argmax(q))
        coefs[f"c({eps:g})"] = float(q[k])
        where[f"{eps:g}"] = float(t[1:][k])
        interior[f"{eps:g}"] = bool(k < len(q) - 1)
    _, sel, win = _window(report, window_fraction)
    if np.all(nrm[sel] > 0):
        slope, _, rms = _loglog(t[sel], nrm[sel])
    else:
        slope, rms = 0.0, 0.0
    return FitResult("remainder", coefs, slope, win, rms,
                     {"argmax_t": where, "interior": interior})


def _cluster_index(ref, cluster):
    if isinstance(cluster, (int, np.integer)):
        return int(cluster)
    members = tuple(sorted(cluster))
    return ref.partition.clusters.index(members)


def cluster_com_fit(report, ref, cluster, window_fraction=0.1):
    """Fit the cluster barycenter ``c(t) - a_K t = c1 log t + c0``.

    Candidates for ``c1``: ``-gradU_K / M_K`` and ``-gradU_K`` where
    ``gradU_K = -sum_{i in K, j not in K} m_i m_j a_ij / |a_ij|^3``.
    """
    if ref.regime == Regime.HYPERBOLIC:
        raise RegimeMismatch("cluster fits need parabolic clusters")
    k = _cluster_index(ref, cluster)
    idx = list(ref.partition.clusters[k])
    out = [j for j in range(ref.system.n) if j not in idx]
    m = ref.system.masses
    mk = m[idx].sum()
    t, sel, win = _window(report, window_fraction)
    x = positions(ref, report.path)[sel]
    com = np.einsum("i,kid->kd", m[idx], x[:, idx]) / mk
    ak = ref.a.coords[idx[0]]
    c1, c0, rms = fit_log_term(t[sel], com - ak * t[sel, None])
    a = ref.a.coords
    gt = np.zeros(ref.system.dim)
    for i in idx:
        for j in out:
            aij = a[i] - a[j]
            gt -= m[i] * m[j] * aij / np.linalg.norm(aij) ** 3
    preds = {"mass_weighted": -gt / mk, "literal": -gt}
    errs = {key: _rel(c1, p) for key, p in preds.items()}
    best = min(errs, key=errs.get)
    rel = x[:, idx] - com[:, None, :]
    spread = _mnorm(m[idx], rel)
    rel_exp = _loglog(t[sel], spread)[0] if np.all(spread > 0) else float("nan")
    return FitResult("cluster_com", {"c1": c1, "c0": c0}, None, win, rms, {
        "cluster": [i + 1 for i in idx], "grad_tilde": gt,
        "predicted_mass_weighted": preds["mass_weighted"],
        "predicted_literal": preds["literal"],
        "rel_err_mass_weighted": errs["mass_weighted"],
        "rel_err_literal": errs["literal"], "best": best,
        "rel_err": errs[best], "relative_exponent": rel_exp})


# -- free-time spot check -----------------------------------------------------

class _FreeTime:
    def __init__(self, ref, report):
        self.ref = ref
        self.path = report.path
        self.grid = report.path.grid
        self.obj = DiscreteAction(ref, self.grid, far_field=False)
        self.phi = np.asarray(report.path.values)
        self.base = self.obj.cell_action(self.phi)
        self.x = positions(ref, report.path)
        sys = ref.system
        t, h = self.grid.nodes, self.grid.widths
        s = 0.5 * (_GL4_X + 1.0)
        tq = t[:-1, None] + h[:, None] * s
        rd = ref.r0_dot(tq) + (np.diff(self.phi, axis=0) / h[:, None, None])[:, None]
        self.kin = 0.5 * h * np.einsum("q,i,kqid,kqid->k", 0.5 * _GL4_W,
                                       sys.masses, rd, rd)
        xm = ref.r0(self.grid.midpoints) + 0.5 * (self.phi[:-1] + self.phi[1:]) \
            + ref.x0_shift.coords
        self.pot = h * pair_potential(sys, xm)

    def perturbation_margin(self, i, j, delta):
        """Action change on cells ``i..j-1`` when ``delta`` (zero at both ends)
        is added to nodes ``i..j``."""
        phi = self.phi.copy()
        phi[i:j + 1] += delta
        cells = self.obj.cell_action(phi)
        if cells is None:
            return np.inf, 1.0
        scale = max(1.0, float(np.sum(np.abs(self.kin[i:j]) + self.pot[i:j])))
        return float(np.sum(cells[i:j]) - np.sum(self.base[i:j])), scale

    def dilation_margin(self, i, j, d, h):
        """Lagrangian cost change when the arc on ``[t_i, t_j]`` is traversed
        in time ``(1 + d)`` times longer, energy term included."""
        K = float(np.sum(self.kin[i:j]))
        P = float(np.sum(self.pot[i:j]))
        span = self.grid.nodes[j] - self.grid.nodes[i]
        margin = K * (1 / (1 + d) - 1) + (P + h * span) * d
        return margin, max(1.0, K + P)


def freetime_spotcheck(ref, report, trials=100, rng_seed=0, h=None, slack=1e-8):
    """Count competitors cheaper than the path by more than ``slack * scale``.

    Half of the trials add a smooth random perturbation vanishing at the ends
    of a random node-aligned subinterval; the other half traverse the same
    arc with a time dilation ``1 + d``, ``d`` uniform in ``[-0.2, 0.2]``.
    Returns ``(violations, worst scaled margin)``.
    """
    if h is None:
        h = energy_check(ref, report)[0]
    ft = _FreeTime(ref, report)
    rng = np.random.default_rng(rng_seed)
    sys = ref.system
    t = ft.grid.nodes
    n = ft.grid.n
    violations = 0
    worst = np.inf
    for trial in range(trials):
        i = int(rng.integers(1, n - 5))
        j = int(rng.integers(i + 4, n))
        if trial % 2 == 0:
            s = np.log(t[i:j + 1] / t[i]) / np.log(t[j] / t[i])
            coef = project_array(rng.standard_normal((3, sys.n, sys.dim)), sys.masses)
            size = float(np.sqrt(np.mean(_mnorm(sys.masses, ft.x[i:j + 1]) ** 2)
                                 / sys.total_mass))
            amp = size * 10.0 ** rng.uniform(-7, -1)
            delta = sum(c * np.sin((q + 1) * np.pi * s)[:, None, None]
                        for q, c in enumerate(coef))
            delta *= amp / max(np.abs(delta).max(), 1e-300)
            delta[0] = delta[-1] = 0.0
            margin, scale = ft.perturbation_margin(i, j, delta)
        else:
            margin, scale = ft.dilation_margin(i, j, rng.uniform(-0.2, 0.2), h)
        if margin < -slack * scale:
            violations += 1
        worst = min(worst, margin / scale)
    return violations, float(worst)


def freetime_margin(ref, report, i, j, delta=None, dilation=0.0, h=None):
    """Margin of a single competitor (perturbation ``delta`` or a dilation)."""
    ft = _FreeTime(ref, report)
    if delta is not None:
        return ft.perturbation_margin(i, j, delta)[0]
    if h is None:
        h = energy_check(ref, report)[0]
    return ft.dilation_margin(i, j, dilation, h)[0]


# -- batch ------------------------------------------------------------------

DEFAULT_CHECKS = {
    "ode_window": [2.0, 100.0],
    "ode_tol": 1e-4,
    "energy_tol": 1e-5,
    "window_fraction": 0.1,
    "epsilons": [0.05],
    "remainder_slope_tol": 0.05,
    "chazy_tol": 0.02,
    "cluster_tol": 0.05,
    "min_separation": 1e-3,
    "freetime_trials": 100,
    "freetime_seed": 0,
    "stationarity_tol": 1e-6,
    "x0_tol": 1e-9,
    "enabled": ["stationarity", "initial_point", "separation", "ode", "energy",
                "growth", "chazy", "remainder", "cluster_com", "freetime"],
}


def run_verification(ref, report, options=None):
    """Run the enabled checks; returns ``(results, failed_names)``."""
    opt = dict(DEFAULT_CHECKS)
    opt.update(options or {})
    on = set(opt["enabled"])
    res = {}
    T = report.path.grid.T_max
    x = positions(ref, report.path)
    if "stationarity" in on:
        res["stationarity"] = {"grad_norm": report.final_grad_norm,
                               "passed": report.final_grad_norm <= opt["stationarity_tol"]}
    if "initial_point" in on:
        gap = float(np.max(np.abs(x[0] - ref.x0.coords)))
        res["initial_point"] = {"max_abs_gap": gap, "passed": gap <= opt["x0_tol"]
                                * (1 + np.max(np.abs(ref.x0.coords)))}
    if "separation" in on:
        from .motion import min_separation
        val, tt = min_separation(ref, report.path, 1.01)
        res["separation"] = {"value": val, "t": tt, "passed": val >= opt["min_separation"]}
    if "ode" in on:
        lo, hi = opt["ode_window"]
        hi = min(hi, T)
        err = ode_crosscheck(ref, report, lo, hi)
        res["ode"] = {"window": [lo, hi], "max_rel_err": err, "passed": err <= opt["ode_tol"]}
    h = None
    if "energy" in on or "freetime" in on:
        h, h0, r = energy_check(ref, report)
        if "energy" in on:
            res["energy"] = {"h_measured": h, "h_expected": h0, "residual": r,
                             "passed": r <= opt["energy_tol"]}
    wf = opt["window_fraction"]
    if "growth" in on:
        targets = growth_targets(ref)
        fits = []
        ok = True
        i, j = ref.system.pairs
        for p in zip(i.tolist(), j.tolist()):
            f = growth_fit(report, ref, p, wf)
            want, tol = targets[f.extra["kind"]]
            good = abs(f.exponent - want) <= tol
            ok &= good
            fits.append(f.to_dict() | {"target": want, "tol": tol, "passed": bool(good)})
        res["growth"] = {"fits": fits, "passed": bool(ok)}
    if "chazy" in on and ref.regime == Regime.HYPERBOLIC:
        f = chazy_fit(report, ref, wf)
        res["chazy"] = f.to_dict() | {"passed": f.extra["rel_err"] <= opt["chazy_tol"]}
    if "remainder" in on and ref.regime != Regime.HYPERBOLIC:
        f = remainder_fit(report, ref, opt["epsilons"], wf)
        res["remainder"] = f.to_dict() | {
            "passed": f.exponent <= 1 / 3 + opt["remainder_slope_tol"]}
    if "cluster_com" in on and ref.regime == Regime.HYPERBOLIC_PARABOLIC:
        fits = [cluster_com_fit(report, ref, k, wf)
                for k in range(len(ref.partition.clusters))]
        ok = all(f.extra["rel_err"] <= opt["cluster_tol"] for f in fits)
        res["cluster_com"] = {"fits": [f.to_dict() for f in fits], "passed": bool(ok)}
    if "freetime" in on:
        v, worst = freetime_spotcheck(ref, report, opt["freetime_trials"],
                                      opt["freetime_seed"], h=h)
        res["freetime"] = {"violations": v, "worst_margin": worst, "passed": v == 0}
    failed = sorted(k for k, r in res.items() if not r["passed"])
    return res, failed
