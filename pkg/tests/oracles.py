"""Extended-precision reference evaluations used by the tests."""

import mpmath as mp
import numpy as np

DPS = 60


def _bracket(x, a):
    return x ** a if x > 0 else mp.mpf(0)


def potential(chi, k_c, alpha):
    chi, k_c, a = mp.mpf(chi), mp.mpf(k_c), mp.mpf(alpha) + 1
    return k_c / a * _bracket(chi, a)


def force(chi, k_c, alpha):
    return mp.mpf(k_c) * _bracket(mp.mpf(chi), mp.mpf(alpha))


def stiffness(chi, k_c, alpha):
    chi = mp.mpf(chi)
    if chi <= 0:
        return mp.mpf(0)
    return mp.mpf(k_c) * mp.mpf(alpha) * chi ** (mp.mpf(alpha) - 1)


def quotient(chi, s, k_c, alpha):
    """``(V(chi) - V(chi - s)) / s``.

    Steps below 1e-40 relative to ``chi`` use the midpoint force, whose
    relative error is O((s / chi)^2); larger steps keep 20 digits after the
    cancellation at this working precision.
    """
    with mp.workdps(DPS):
        chi, s = mp.mpf(chi), mp.mpf(s)
        if s == 0 or abs(s) < mp.mpf("1e-40") * abs(chi):
            return force(chi - s / 2, k_c, alpha)
        return (potential(chi, k_c, alpha) - potential(chi - s, k_c, alpha)) / s


def quotient_derivative(chi, s, k_c, alpha):
    with mp.workdps(DPS):
        chi, s = mp.mpf(chi), mp.mpf(s)
        u = chi - s
        return (s * force(u, k_c, alpha) - potential(chi, k_c, alpha) + potential(u, k_c, alpha)) / s ** 2


def quotient_second_derivative(chi, s, k_c, alpha):
    """``d^2/ds^2`` of the quotient: ``Q(s) / s^3`` with ``Q = 2 dV - 2 s f(u) - s^2 f'(u)``."""
    with mp.workdps(DPS):
        chi, s = mp.mpf(chi), mp.mpf(s)
        u = chi - s
        q = (2 * (potential(chi, k_c, alpha) - potential(u, k_c, alpha))
             - 2 * s * force(u, k_c, alpha) - s ** 2 * stiffness(u, k_c, alpha))
        return q / s ** 3


def lumped_ec_residual(s, y, q, m, k, k_c, alpha, y_c, g0, dt):
    """EC residual ``(1 + xi k/2) s + 2 (xi k/2 y - q) - xi m g0 - xi G``."""
    with mp.workdps(DPS):
        s, y, q = mp.mpf(s), mp.mpf(y), mp.mpf(q)
        xi = mp.mpf(dt) ** 2 / (2 * mp.mpf(m))
        k = mp.mpf(k)
        G = quotient(y_c - y, s, k_c, alpha)
        return (1 + xi * k / 2) * s + 2 * (xi * k / 2 * y - q) - xi * mp.mpf(m) * mp.mpf(g0) - xi * G


def lumped_ec_second_derivative(s, y, m, k_c, alpha, y_c, dt):
    with mp.workdps(DPS):
        xi = mp.mpf(dt) ** 2 / (2 * mp.mpf(m))
        return -xi * quotient_second_derivative(mp.mpf(y_c) - mp.mpf(y), s, k_c, alpha)


def string_residual(s, y, q, D, y_c, active, k_c, alpha, xi, c_id=1, c_d=1):
    """Dense residual ``[c_id I + c_d D] s + 2 (D y - q) - xi G`` in extended precision."""
    with mp.workdps(DPS):
        n = len(s)
        Dm = mp.matrix([[mp.mpf(float(D[i, j])) for j in range(n)] for i in range(n)])
        sv = mp.matrix([mp.mpf(float(v)) for v in s])
        yv = mp.matrix([mp.mpf(float(v)) for v in y])
        qv = mp.matrix([mp.mpf(float(v)) for v in q])
        F = mp.mpf(c_id) * sv + mp.mpf(c_d) * (Dm * sv) + 2 * (Dm * yv - qv)
        out = []
        for i in range(n):
            val = F[i]
            if active[i]:
                chi = mp.mpf(float(y_c[i])) - yv[i]
                G = quotient(chi, sv[i], k_c, alpha)
                val -= mp.mpf(xi) * G
            out.append(val)
        return np.array([float(v) for v in out])
