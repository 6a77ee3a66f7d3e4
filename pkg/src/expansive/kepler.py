"""Two-body propagation in universal variables.

Works in any dimension: the motion stays in the plane of ``x0`` and ``v0``
(or on a line for radial data) and the Lagrange f and g coefficients act
on the vectors directly.
"""
import math

import numpy as np

from .errors import ConvergenceFailure


def stumpff(z):
    """Stumpff functions ``C(z), S(z)`` with series near zero."""
    if z > 1e-3:
        s = math.sqrt(z)
        return (1 - math.cos(s)) / z, (s - math.sin(s)) / s**3
    if z < -1e-3:
        s = math.sqrt(-z)
        return (math.cosh(s) - 1) / -z, (math.sinh(s) - s) / s**3
    c = 1 / 2 - z / 24 + z**2 / 720 - z**3 / 40320 + z**4 / 3628800
    s = 1 / 6 - z / 120 + z**2 / 5040 - z**3 / 362880 + z**4 / 39916800
    return c, s


def _universal_anomaly(mu, r0, vr0, alpha, dt, tol=1e-13, max_iter=200):
    sm = math.sqrt(mu)
    dt = float(dt)

    def F(chi):
        z = alpha * chi * chi
        try:
            c, s = stumpff(z)
        except OverflowError:
            return math.copysign(math.inf, chi), math.inf
        c, s = float(c), float(s)
        val = r0 * vr0 / sm * chi * chi * c + (1 - alpha * r0) * chi**3 * s \
            + r0 * chi - sm * dt
        # dF/dchi equals the radius at the propagated point
        der = r0 * vr0 / sm * chi * (1 - z * s) + (1 - alpha * r0) * chi * chi * c + r0
        return val, der

    # F is increasing in chi; bracket the root, then safeguarded Newton
    lo, hi = (0.0, 1.0) if dt >= 0 else (-1.0, 0.0)
    step = max(sm * abs(dt) / r0, 1.0)
    for _ in range(400):
        if dt >= 0 and F(hi)[0] < 0:
            lo, hi = hi, hi + step
            step *= 2
        elif dt < 0 and F(lo)[0] > 0:
            hi, lo = lo, lo - step
            step *= 2
        else:
            break
    chi = 0.5 * (lo + hi)
    dx_old = hi - lo
    for _ in range(max_iter):
        val, der = F(chi)
        if val == 0:
            return chi
        if val > 0:
            hi = chi
        else:
            lo = chi
        # Newton unless it leaves the bracket or converges too slowly
        if not (math.isfinite(val) and math.isfinite(der)) or \
                not lo < chi - val / der < hi or abs(2 * val) > abs(dx_old * der):
            new = 0.5 * (lo + hi)
        else:
            new = chi - val / der
        dx_old = abs(new - chi)
        if dx_old <= tol * max(1.0, abs(new)) or hi - lo <= tol * max(1.0, abs(new)):
            return new
        chi = new
    raise ConvergenceFailure("universal anomaly iteration did not converge")


def kepler_oracle(m1, m2, x_rel0, v_rel0, t):
    """Propagate ``x'' = -(m1 + m2) x / |x|^3`` for elapsed time ``t``."""
    mu = float(m1 + m2)
    x0 = np.asarray(x_rel0, dtype=float)
    v0 = np.asarray(v_rel0, dtype=float)
    r0 = float(np.linalg.norm(x0))
    if r0 == 0:
        raise ValueError("collision in the initial state")
    vr0 = float(x0 @ v0) / r0
    alpha = 2.0 / r0 - float(v0 @ v0) / mu
    if t == 0:
        return x0.copy(), v0.copy()
    chi = _universal_anomaly(mu, r0, vr0, alpha, t)
    z = alpha * chi * chi
    c, s = stumpff(z)
    f = 1 - chi * chi / r0 * c
    g = t - chi**3 / math.sqrt(mu) * s
    x = f * x0 + g * v0
    r = float(np.linalg.norm(x))
    fdot = math.sqrt(mu) / (r * r0) * (z * s - 1) * chi
    gdot = 1 - chi * chi / r * c
    return x, fdot * x0 + gdot * v0


def radial_parabolic(mu, t, t0=0.0):
    """Radius of zero-energy radial escape, ``(9 mu / 2)^(1/3) (t - t0)^(2/3)``."""
    return np.cbrt(4.5 * mu) * np.cbrt(np.asarray(t) - t0) ** 2
