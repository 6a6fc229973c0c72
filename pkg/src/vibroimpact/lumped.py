"""Mass-spring-gravity-barrier system and its time-stepping schemes.

The mass ``m`` hangs on a spring ``k`` under gravity ``g0`` and is repelled by
a barrier at ``y_c`` when ``y < y_c`` (compression ``chi = y_c - y``).  The
state is kept as displacement ``y`` and scaled momentum ``q = p dt / (2 m)``.

Implicit schemes (EC, TR, MR) solve a scalar equation ``F(s) = 0`` for the
step ``s = y[n+1] - y[n]`` and update ``q[n+1] = s - q[n]``.  PSE is the
explicit centred-difference comparison scheme.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .contact import (
    ContactLaw,
    bracket_power,
    contact_discrete_gradient,
    contact_force,
    contact_potential,
    discrete_gradient_scalar,
)
from .errors import NonConvergence


class Scheme(str, enum.Enum):
    EC = "EC"    # energy conserving (discrete gradient)
    TR = "TR"    # trapezoidal rule
    MR = "MR"    # implicit midpoint rule
    PSE = "PSE"  # partially stable explicit


@dataclass(frozen=True)
class LumpedParams:
    m: float
    k: float
    law: ContactLaw
    y_c: float
    g0: float
    dt: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be positive")
        if not self.k >= 0:
            raise ValueError("spring stiffness must be >= 0")
        if not self.dt > 0:
            raise ValueError("time step must be positive")

    @property
    def xi(self):
        return self.dt * self.dt / (2.0 * self.m)

    @property
    def beta_c(self):
        return self.xi * self.law.k_c


@dataclass(frozen=True)
class LumpedState:
    y: float
    q: float
    n: int = 0

    @classmethod
    def from_momentum(cls, y, p, params: LumpedParams, n=0):
        return cls(float(y), float(p) * params.dt / (2.0 * params.m), n)

    def momentum(self, params: LumpedParams):
        return 2.0 * params.m * self.q / params.dt


@dataclass(frozen=True)
class LumpedEnergy:
    kinetic: float
    spring: float
    contact: float
    gravity: float

    @property
    def total(self):
        return self.kinetic + self.spring + self.contact + self.gravity


@dataclass(frozen=True)
class NewtonOptions:
    """Stop when ``|ds| <= tol_s (1 + |s|)`` and ``|F| <= tol_f (1 + |2 q|)``."""

    tol_s: float = 1e-14
    tol_f: float = 1e-12
    max_iter: int = 50


DEFAULT_NEWTON = NewtonOptions()


def _residual_fn(scheme, params: LumpedParams):
    """Closure ``f(s, y, q) -> (F, dF/ds)`` with constants pre-bound."""
    scheme = Scheme(scheme)
    xi = params.xi
    k, m, g0, y_c = params.k, params.m, params.g0, params.y_c
    k_c, alpha = params.law.k_c, params.law.alpha
    contact = k_c > 0

    if scheme is Scheme.EC:
        lin = 1.0 + xi * k / 2.0
        half = xi * k / 2.0
        grav = xi * m * g0

        def f(s, y, q):
            # s + half*s rather than lin*s: a rounded (1 + half) would act as damping
            F = (s + half * s) + 2.0 * (half * y - q) - grav
            dF = lin
            if contact:
                g, dg = discrete_gradient_scalar(y_c - y, s, k_c, alpha)
                F -= xi * g
                dF -= xi * dg
            return F, dF
        return f

    def dpot(y):
        chi = y_c - y
        v1 = k * y - m * g0
        v2 = k
        if contact and chi > 0:
            v1 -= k_c * chi ** alpha
            v2 += k_c * alpha * chi ** (alpha - 1)
        return v1, v2

    if scheme is Scheme.TR:
        def f(s, y, q):
            a1, a2 = dpot(y + s)
            b1, _ = dpot(y)
            return xi * (a1 + b1) / 2.0 + s - 2.0 * q, 1.0 + xi * a2 / 2.0
        return f

    if scheme is Scheme.MR:
        def f(s, y, q):
            v1, v2 = dpot(y + s / 2.0)
            return xi * v1 + s - 2.0 * q, 1.0 + xi * v2 / 2.0
        return f

    raise ValueError("the explicit PSE scheme has no residual")


def residual(scheme, s, state: LumpedState, params: LumpedParams):
    """Scheme residual ``F(s)`` and its derivative ``dF/ds``."""
    return _residual_fn(scheme, params)(float(s), state.y, state.q)


def _newton(f, s, y, q, options: NewtonOptions):
    tol_f = options.tol_f * (1.0 + abs(2.0 * q))
    F = math.nan
    for it in range(options.max_iter + 1):
        F, dF = f(s, y, q)
        ds = F / dF
        s -= ds
        if abs(ds) <= options.tol_s * (1.0 + abs(s)) and abs(F) <= tol_f:
            return s, it
    raise NonConvergence(f"Newton did not converge in {options.max_iter} iterations "
                         f"(|F| = {abs(F):.3e})", residual=abs(F),
                         iterations=options.max_iter)


def solve_step(scheme, state: LumpedState, params: LumpedParams, guess=None,
               options: NewtonOptions = DEFAULT_NEWTON):
    """Root ``s`` of the scheme residual.

    ``guess`` defaults to ``2 q``, the contact-free solution.
    """
    f = _residual_fn(scheme, params)
    s0 = 2.0 * state.q if guess is None else float(guess)
    return _newton(f, s0, state.y, state.q, options)[0]


def _pse_next(y, y_prev, params: LumpedParams):
    m_dt2 = params.m / (params.dt * params.dt)
    law = params.law
    c = law.k_c * bracket_power(params.y_c - y, law.alpha - 1) if law.k_c > 0 else 0.0
    half = 0.5 * (params.k + c)
    rhs = m_dt2 * (2.0 * y - y_prev) - half * y_prev + c * params.y_c + params.m * params.g0
    return rhs / (m_dt2 + half)


def step(scheme, state: LumpedState, params: LumpedParams, prev_y=None, guess=None,
         options: NewtonOptions = DEFAULT_NEWTON):
    """Advance one time step.

    For PSE ``prev_y`` (the displacement one step back) is required; the
    returned ``q`` is then the one-sided estimate ``(y[n+1] - y[n]) / 2``.
    :func:`simulate` reconstructs centred momenta for energy reporting.
    """
    scheme = Scheme(scheme)
    if scheme is Scheme.PSE:
        if prev_y is None:
            raise ValueError("PSE needs the previous displacement (prev_y)")
        y_next = _pse_next(state.y, float(prev_y), params)
        return LumpedState(y_next, 0.5 * (y_next - state.y), state.n + 1)
    s = solve_step(scheme, state, params, guess=guess, options=options)
    return LumpedState(state.y + s, s - state.q, state.n + 1)


def hamiltonian(state: LumpedState, params: LumpedParams) -> LumpedEnergy:
    return LumpedEnergy(
        kinetic=state.q * state.q / params.xi,
        spring=0.5 * params.k * state.y * state.y,
        contact=contact_potential(params.y_c - state.y, params.law),
        gravity=-params.m * params.g0 * state.y,
    )


@dataclass
class LumpedTrajectory:
    """Time series of a lumped run; index ``n`` is time ``n dt``."""

    scheme: Scheme
    params: LumpedParams
    y: np.ndarray
    q: np.ndarray
    kinetic: np.ndarray
    spring: np.ndarray
    contact: np.ndarray
    gravity: np.ndarray
    s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def t(self):
        return np.arange(len(self.y)) * self.params.dt

    @property
    def p(self):
        return 2.0 * self.params.m * self.q / self.params.dt

    @property
    def H(self):
        return self.kinetic + self.spring + self.contact + self.gravity

    def state(self, n) -> LumpedState:
        return LumpedState(float(self.y[n]), float(self.q[n]), n)


def simulate(scheme, params: LumpedParams, initial: LumpedState, n_steps: int,
             options: NewtonOptions = DEFAULT_NEWTON) -> LumpedTrajectory:
    """Run ``n_steps`` steps from ``initial`` and record energies per sample.

    PSE is bootstrapped with one EC step and reports momentum from the
    centred difference ``m (y[n+1] - y[n-1]) / (2 dt)``.
    """
    scheme = Scheme(scheme)
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    y = np.empty(n_steps + 1)
    q = np.empty(n_steps + 1)
    svals = np.empty(n_steps)
    iters = np.zeros(n_steps, dtype=int)
    y[0], q[0] = initial.y, initial.q

    if scheme is Scheme.PSE:
        if n_steps > 0:
            f = _residual_fn(Scheme.EC, params)
            s, iters[0] = _wrap_newton(f, 2.0 * initial.q, initial.y, initial.q, options, 0)
            yy = np.empty(n_steps + 2)
            yy[0], yy[1] = initial.y, initial.y + s
            for n in range(1, n_steps + 1):
                yy[n + 1] = _pse_next(yy[n], yy[n - 1], params)
            y[:] = yy[:-1]
            svals[:] = np.diff(y)
            # q[n] = p[n] dt / (2m) with centred p
            q[1:] = (yy[2:] - yy[:-2]) / 4.0
    else:
        f = _residual_fn(scheme, params)
        yn, qn = initial.y, initial.q
        s = 2.0 * qn
        tol_s, tol_f0, max_iter = options.tol_s, options.tol_f, options.max_iter
        for n in range(n_steps):
            # inlined _newton: this loop dominates lumped run time
            tol_f = tol_f0 * (1.0 + abs(2.0 * qn))
            for it in range(max_iter + 1):
                F, dF = f(s, yn, qn)
                ds = F / dF
                s -= ds
                if abs(ds) <= tol_s * (1.0 + abs(s)) and abs(F) <= tol_f:
                    break
            else:
                raise NonConvergence(
                    f"step {n}: Newton did not converge in {max_iter} iterations "
                    f"(|F| = {abs(F):.3e})", step_index=n, residual=abs(F),
                    iterations=max_iter)
            iters[n] = it
            svals[n] = s
            yn = yn + s
            qn = s - qn
            y[n + 1] = yn
            q[n + 1] = qn

    chi = params.y_c - y
    return LumpedTrajectory(
        scheme=scheme,
        params=params,
        y=y,
        q=q,
        kinetic=q * q / params.xi,
        spring=0.5 * params.k * y * y,
        contact=contact_potential(chi, params.law),
        gravity=-params.m * params.g0 * y,
        s=svals,
        iterations=iters,
    )


def _wrap_newton(f, s, y, q, options, n):
    try:
        return _newton(f, s, y, q, options)
    except NonConvergence as exc:
        raise exc.at_step(n) from None


def mid_compression(traj: LumpedTrajectory):
    """Compression at half steps, ``y_c - (y[n+1] + y[n]) / 2``."""
    return traj.params.y_c - 0.5 * (traj.y[1:] + traj.y[:-1])


def contact_interval(traj: LumpedTrajectory):
    """First and last step index with positive mid-step compression, or None.

    A collision shorter than one step can leave every mid-step compression
    negative; the steps with compression at either end are used then.
    """
    idx = np.flatnonzero(mid_compression(traj) > 0)
    if idx.size == 0:
        chi = traj.params.y_c - traj.y
        idx = np.flatnonzero((chi[1:] > 0) | (chi[:-1] > 0))
    if idx.size == 0:
        return None
    return int(idx[0]), int(idx[-1])


def effective_force(mid_chi, s, law: ContactLaw):
    """Effective repelling force of the EC scheme as a function of mid-step compression.

    A step ``s`` taken from compression ``chi`` ends at ``chi - s``; the
    mid-step compression is ``chi - s / 2``.
    """
    mid_chi = np.asarray(mid_chi, dtype=float)
    return contact_discrete_gradient(mid_chi + 0.5 * s, np.broadcast_to(s, mid_chi.shape), law)


def effective_force_curve(traj: LumpedTrajectory):
    """Per-step ``(mid_compression, effective_force, theoretical_force)`` arrays.

    The theoretical curve is ``k_c [chi^alpha]`` at the mid-step compression.
    """
    law = traj.params.law
    chi_n = traj.params.y_c - traj.y[:-1]
    s = np.diff(traj.y) if traj.scheme is Scheme.PSE else traj.s
    mid = chi_n - 0.5 * s
    return mid, contact_discrete_gradient(chi_n, s, law), contact_force(mid, law)


def warped_frequency(omega_a, dt):
    """Angular frequency at which a linear oscillator of frequency ``omega_a`` rings."""
    return 2.0 / dt * np.arctan(np.asarray(omega_a, dtype=float) * dt / 2.0)
