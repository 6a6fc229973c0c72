"""One-sided power-law contact primitives.

The contact force is ``k_c * [chi^alpha]`` where ``chi`` is the compression
(interpenetration) and ``[x^a]`` denotes the one-sided power, zero for
``x <= 0``.  The potential is ``k_c / (alpha + 1) * [chi^(alpha + 1)]``.

The energy-conserving schemes replace the contact force by the difference
quotient of the potential across a time step.  With ``chi`` the compression
at the start of the step and ``step`` the displacement increment (compression
decreases by ``step``), the quotient is

    G(chi, step) = (V(chi) - V(chi - step)) / step

which tends to ``k_c * [chi^alpha]`` as ``step -> 0``.  The functions here
evaluate ``G`` and ``dG/dstep`` without catastrophic cancellation, so Newton
iterations stay quadratic down to round-off.

Every function accepts scalars or numpy arrays.  The ``*_scalar`` helpers are
pure-float fast paths used by the lumped solver inner loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# |step| <= max(STEP_LIMIT * |chi|, STEP_FLOOR) switches to the analytic s -> 0 limit.  The
# quotient branches are cancellation-free for any nonzero ratio, so the limit
# only has to cover steps below rounding relative to the compression.
STEP_LIMIT = 2.0 ** -53
# absolute floor (metres) keeping powers of the compression out of underflow
STEP_FLOOR = 1e-60

# |r| below this uses the power series for the derivative kernel.
_SERIES_RADIUS = 0.05
_SERIES_TERMS = 14

_SCALAR_LOOP_MAX = 8


@dataclass(frozen=True)
class ContactLaw:
    """Power-law contact ``f = k_c [chi^alpha]``."""

    k_c: float
    alpha: float = 1.0

    def __post_init__(self):
        if not self.k_c >= 0:
            raise ValueError(f"contact stiffness must be >= 0, got {self.k_c}")
        if not self.alpha >= 1:
            raise ValueError(f"contact exponent must be >= 1, got {self.alpha}")


def bracket_power(chi, alpha):
    """One-sided power ``h(chi) * chi**alpha``."""
    if np.ndim(chi) == 0:
        chi = float(chi)
        return chi ** alpha if chi > 0 else 0.0
    chi = np.asarray(chi, dtype=float)
    out = np.zeros_like(chi)
    pos = chi > 0
    out[pos] = chi[pos] ** alpha
    return out


def contact_potential(chi, law: ContactLaw):
    # chi * chi^alpha keeps the exponent exact; alpha + 1 may round
    return law.k_c / (law.alpha + 1) * (chi * bracket_power(chi, law.alpha))


def contact_force(chi, law: ContactLaw):
    return law.k_c * bracket_power(chi, law.alpha)


def contact_stiffness(chi, law: ContactLaw):
    """Derivative of the contact force with respect to compression."""
    if law.alpha == 1:
        if np.ndim(chi) == 0:
            return law.k_c if chi > 0 else 0.0
        return np.where(np.asarray(chi) > 0, law.k_c, 0.0)
    return law.k_c * law.alpha * bracket_power(chi, law.alpha - 1)


def _binomials(a, terms):
    """Generalised binomial coefficients C(a, k) for k = 2 .. 2 + terms - 1."""
    coeffs = []
    c = a * (a - 1) / 2.0
    for k in range(2, 2 + terms):
        coeffs.append(c)
        c *= (a - k) / (k + 1)
    return coeffs


def _phi_scalar(r, a):
    # ((1 + r)^a - 1 - a r) / r^2, accurate for small |r|
    if abs(r) < _SERIES_RADIUS:
        total = 0.0
        for c in reversed(_binomials(a, _SERIES_TERMS)):
            total = total * r + c
        return total
    return (math.expm1(a * math.log1p(r)) - a * r) / (r * r)


def _phi(r, a):
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    near = np.abs(r) < _SERIES_RADIUS
    if near.any():
        rn = r[near]
        total = np.zeros_like(rn)
        for c in reversed(_binomials(a, _SERIES_TERMS)):
            total = total * rn + c
        out[near] = total
    far = ~near
    if far.any():
        rf = r[far]
        out[far] = (np.expm1(a * np.log1p(rf)) - a * rf) / (rf * rf)
    return out


def discrete_gradient_scalar(chi, step, k_c, alpha):
    """Return ``(G, dG/dstep)`` for float inputs.

    Pure-Python twin of :func:`discrete_gradient_pair`.
    """
    a = alpha + 1.0
    u = chi - step
    if abs(step) <= max(STEP_LIMIT * abs(chi), STEP_FLOOR):
        if chi > 0:
            return k_c * chi ** alpha, -0.5 * k_c * alpha * chi ** (alpha - 1)
        return 0.0, 0.0
    if chi > 0:
        if u > 0:
            r = step / u
            if abs(r) <= 0.5:
                g = k_c * u ** alpha * math.expm1(a * math.log1p(r)) / (a * r)
                dg = -k_c * u ** (alpha - 1) * _phi_scalar(r, a) / a
                return g, dg
            g = k_c * (chi * chi ** alpha - u * u ** alpha) / a / step
            return g, (k_c * u ** alpha - g) / step
        # leaving contact within the step
        g = k_c * chi * chi ** alpha / a / step
        return g, -g / step
    if u > 0:
        # entering contact within the step
        g = -k_c * u * u ** alpha / a / step
        return g, (k_c * u ** alpha - g) / step
    return 0.0, 0.0


def discrete_gradient_pair(chi, step, law: ContactLaw):
    """Vectorised ``(G, dG/dstep)`` of the contact potential quotient.

    Parameters
    ----------
    chi : array_like
        Compression at the start of the step.
    step : array_like
        Displacement increment; the compression after the step is
        ``chi - step``.
    law : ContactLaw

    Returns
    -------
    G, dG : ndarray
        The quotient ``(V(chi) - V(chi - step)) / step`` and its derivative
        with respect to ``step``.  Both fall back to the analytic limits
        ``k_c [chi^alpha]`` and ``-V''(chi) / 2`` when ``|step|`` is below
        ``max(STEP_LIMIT * |chi|, STEP_FLOOR)``.
    """
    if np.ndim(chi) == 0 and np.ndim(step) == 0:
        return discrete_gradient_scalar(float(chi), float(step), law.k_c, law.alpha)
    chi, step = np.broadcast_arrays(np.asarray(chi, dtype=float),
                                    np.asarray(step, dtype=float))
    g = np.zeros(chi.shape)
    dg = np.zeros(chi.shape)
    u = chi - step
    # only entries touching the barrier at either end of the step contribute
    live = (chi > 0) | (u > 0)
    if not live.any():
        return g, dg
    idx = np.flatnonzero(live)
    if idx.size <= _SCALAR_LOOP_MAX:
        # a handful of contacts: the scalar path beats the masked vector path
        for i in idx.tolist():
            g.flat[i], dg.flat[i] = discrete_gradient_scalar(
                float(chi.flat[i]), float(step.flat[i]), law.k_c, law.alpha)
        return g, dg
    g[live], dg[live] = _pair_live(chi[live], step[live], u[live], law.k_c, law.alpha)
    return g, dg


def _pair_live(chi, step, u, k_c, alpha):
    a = alpha + 1.0
    g = np.empty(chi.shape)
    dg = np.empty(chi.shape)
    small = np.abs(step) <= np.maximum(STEP_LIMIT * np.abs(chi), STEP_FLOOR)
    c0 = chi > 0
    c1 = u > 0

    m = small
    if m.any():
        x = np.maximum(chi[m], 0.0)
        g[m] = k_c * x ** alpha
        dg[m] = np.where(x > 0, -0.5 * k_c * alpha * x ** (alpha - 1), 0.0)

    both = ~small & c0 & c1
    if both.any():
        ub, sb, xb = u[both], step[both], chi[both]
        r = sb / ub
        near = np.abs(r) <= 0.5
        gb = np.empty_like(r)
        dgb = np.empty_like(r)
        if near.any():
            rn, un = r[near], ub[near]
            gb[near] = k_c * un ** alpha * np.expm1(a * np.log1p(rn)) / (a * rn)
            dgb[near] = -k_c * un ** (alpha - 1) * _phi(rn, a) / a
        far = ~near
        if far.any():
            uf, sf, xf = ub[far], sb[far], xb[far]
            gf = k_c * (xf * xf ** alpha - uf * uf ** alpha) / a / sf
            gb[far] = gf
            dgb[far] = (k_c * uf ** alpha - gf) / sf
        g[both] = gb
        dg[both] = dgb

    leave = ~small & c0 & ~c1
    if leave.any():
        sl = step[leave]
        gl = k_c * chi[leave] * chi[leave] ** alpha / a / sl
        g[leave] = gl
        dg[leave] = -gl / sl

    enter = ~small & ~c0 & c1
    if enter.any():
        ue, se = u[enter], step[enter]
        ge = -k_c * ue * ue ** alpha / a / se
        g[enter] = ge
        dg[enter] = (k_c * ue ** alpha - ge) / se
    return g, dg


def contact_discrete_gradient(chi, step, law: ContactLaw):
    """Effective contact force over a step: ``(V(chi - step) - V(chi)) / (-step)``."""
    return discrete_gradient_pair(chi, step, law)[0]


def contact_discrete_gradient_derivative(chi, step, law: ContactLaw):
    """Derivative of :func:`contact_discrete_gradient` with respect to ``step``.

    Non-positive; its ``step -> 0`` limit is ``-k_c * alpha * [chi^(alpha-1)] / 2``.
    """
    return discrete_gradient_pair(chi, step, law)[1]
