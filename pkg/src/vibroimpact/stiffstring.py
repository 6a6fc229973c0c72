"""Energy-conserving scheme for a damped stiff string or beam with obstacles.

The string has ``N`` interior nodes ``x_m = m dx`` (``m = 1..N``) with
``(N + 1) dx = L``.  Boundary nodes and the ghost layer beyond them are
eliminated through the end conditions, so every vector has length ``N``.

With ``D = beta4 D4 - beta2 D2`` the step ``s = y[n+1] - y[n]`` solves

    F(s) = [(1 + gamma dt/2) I + (1 + 2 eta/dt) D] s + 2 (D y - q) + f(s) = 0

where ``f`` is the discrete-gradient contact term.  ``F`` has a symmetric
positive definite Jacobian, so each Newton update is a banded Cholesky solve.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import _banded
from .contact import ContactLaw, contact_potential, discrete_gradient_pair
from .errors import NonConvergence

log = logging.getLogger(__name__)


class Boundary(str, enum.Enum):
    CLAMPED = "clamped"
    SIMPLY_SUPPORTED = "simply_supported"
    FREE = "free"


@dataclass(frozen=True)
class StringParams:
    """Physical and numerical parameters of the string/beam."""

    rhoA: float
    tau: float
    EI: float
    L: float
    N: int
    dt: float
    gamma: float = 0.0
    eta: float = 0.0
    bc_left: Boundary = Boundary.SIMPLY_SUPPORTED
    bc_right: Boundary = Boundary.SIMPLY_SUPPORTED

    def __post_init__(self):
        object.__setattr__(self, "bc_left", Boundary(self.bc_left))
        object.__setattr__(self, "bc_right", Boundary(self.bc_right))
        if not self.rhoA > 0:
            raise ValueError("rhoA must be positive")
        if self.tau < 0 or self.EI < 0 or not self.tau + self.EI > 0:
            raise ValueError("need tau >= 0, EI >= 0 and tau + EI > 0")
        if self.gamma < 0 or self.eta < 0:
            raise ValueError("damping coefficients must be >= 0")
        if not self.dt > 0 or not self.L > 0:
            raise ValueError("dt and L must be positive")
        if self.N < 4:
            raise ValueError("need at least 4 interior nodes")

    @classmethod
    def from_dx(cls, L, dx, **kw):
        """Parameters with ``N`` chosen so the grid spacing is closest to ``dx``."""
        return cls(L=L, N=max(int(round(L / dx)) - 1, 1), **kw)

    @property
    def dx(self):
        return self.L / (self.N + 1)

    @property
    def x(self):
        return np.arange(1, self.N + 1) * self.dx

    @property
    def theta(self):
        return 2.0 * self.rhoA / self.dt

    @property
    def beta2(self):
        return self.tau * self.dt ** 2 / (4.0 * self.rhoA * self.dx ** 2)

    @property
    def beta4(self):
        return self.EI * self.dt ** 2 / (4.0 * self.rhoA * self.dx ** 4)

    @property
    def b(self):
        return 2.0 * self.rhoA * self.dx / self.dt ** 2

    @property
    def xi(self):
        """Scale of contact force densities in the residual, ``dt^2 / (2 rhoA)``."""
        return self.dt ** 2 / (2.0 * self.rhoA)

    def zeta(self, law: ContactLaw):
        return law.k_c * self.dt ** 2 / (2.0 * self.rhoA * (law.alpha + 1))

    @property
    def loss_identity(self):
        return 1.0 + self.gamma * self.dt / 2.0

    @property
    def loss_stiffness(self):
        return 1.0 + 2.0 * self.eta / self.dt


@dataclass
class GridState:
    y: np.ndarray
    q: np.ndarray
    n: int = 0

    def momentum(self, params: StringParams):
        return self.q * params.theta


def _ghost_map(N, bc_left, bc_right):
    """Matrix ``E`` with ``(y_{-1}, y_0, ..., y_{N+2}) = E @ y_interior``."""
    E = np.zeros((N + 4, N))
    E[2:N + 2] = np.eye(N)
    # rows 0, 1 -> y_{-1}, y_0 ; rows N+2, N+3 -> y_{N+1}, y_{N+2}
    if bc_left is Boundary.SIMPLY_SUPPORTED:
        E[0, 0] = -1.0
    elif bc_left is Boundary.FREE:
        # zero moment at nodes 0 and 1: linear extrapolation
        E[1, 0], E[1, 1] = 2.0, -1.0
        E[0, 0], E[0, 1] = 3.0, -2.0
    if bc_right is Boundary.SIMPLY_SUPPORTED:
        E[N + 3, N - 1] = -1.0
    elif bc_right is Boundary.FREE:
        E[N + 2, N - 1], E[N + 2, N - 2] = 2.0, -1.0
        E[N + 3, N - 1], E[N + 3, N - 2] = 3.0, -2.0
    return E


@dataclass(frozen=True)
class SpatialOperators:
    """Difference operators with the end conditions folded in.

    ``D1`` maps nodes to the ``N + 1`` segment slopes (times ``dx``), ``R``
    maps nodes to the ``N + 2`` nodal curvatures (times ``dx^2``);
    ``D2 = -D1' D1`` and ``D4 = R' R`` so both are symmetric and the
    stiffness energy is a sum of squares.
    """

    D1: np.ndarray
    R: np.ndarray
    D2: np.ndarray
    D4: np.ndarray
    D: np.ndarray
    D_band: np.ndarray  # upper band storage, kd = 2
    beta2: float = 0.0
    beta4: float = 0.0
    _ghost: tuple = field(default=None, repr=False, compare=False)

    @property
    def N(self):
        return self.D.shape[0]

    def apply(self, y):
        """``D @ y`` evaluated as differences of differences.

        For smooth ``y`` the banded product cancels against rounded stencil
        weights, which acts like a small spurious mass term; the factored
        form keeps interior row sums exactly zero.
        """
        rows, cols, Eb = self._ghost
        N = y.size
        yy = np.empty(N + 4)
        yy[2:N + 2] = y
        yy[rows] = Eb @ y[cols]
        v = self.beta4 * (yy[2:] - 2.0 * yy[1:-1] + yy[:-2])
        u = self.beta2 * (yy[2:N + 3] - yy[1:N + 2])
        # adjoints of the curvature and slope maps on the padded grid
        w = np.zeros(N + 4)
        w[2:] += v
        w[1:-1] -= 2.0 * v
        w[:-2] += v
        w[2:N + 3] += u
        w[1:N + 2] -= u
        out = w[2:N + 2].copy()
        out[cols] += Eb.T @ w[rows]
        return out


def build_operators(params: StringParams) -> SpatialOperators:
    N = params.N
    if N < 4:
        raise ValueError("need at least 4 interior nodes")
    E = _ghost_map(N, params.bc_left, params.bc_right)
    ext = E[1:N + 3]          # y_0 .. y_{N+1}
    D1 = ext[1:] - ext[:-1]   # segments 1/2 .. N+1/2
    R = E[2:] - 2.0 * E[1:-1] + E[:-2]   # curvature at nodes 0 .. N+1
    D2 = -(D1.T @ D1)
    D4 = R.T @ R
    D = params.beta4 * D4 - params.beta2 * D2
    ghost_rows = np.array([0, 1, N + 2, N + 3])
    ghost_cols = np.array([0, 1, N - 2, N - 1])
    if params.beta2 > 0.3:
        log.warning("beta2 = %.3g exceeds 0.3; modes will crowd near Nyquist", params.beta2)
    return SpatialOperators(D1=D1, R=R, D2=D2, D4=D4, D=D, D_band=_banded.to_band(D, 2),
                            beta2=params.beta2, beta4=params.beta4,
                            _ghost=(ghost_rows, ghost_cols, E[np.ix_(ghost_rows, ghost_cols)]))


class BarrierProfile:
    """Rigid obstacle sampled at the string nodes.

    Nodes with ``active = False`` have no obstacle underneath.
    """

    bandwidth = 0

    def __init__(self, y_c, law: ContactLaw, active=None):
        self.y_c = np.asarray(y_c, dtype=float).copy()
        self.law = law
        if active is None:
            active = np.isfinite(self.y_c)
        self.active = np.asarray(active, dtype=bool).copy()
        if self.active.shape != self.y_c.shape:
            raise ValueError("active mask must match the barrier profile")
        if not np.all(np.isfinite(self.y_c[self.active])):
            raise ValueError("active barrier heights must be finite")
        self.y_c[~self.active] = 0.0
        self._idx = np.flatnonzero(self.active) if law.k_c > 0 else np.zeros(0, dtype=int)

    @classmethod
    def flat(cls, height, params: StringParams, law: ContactLaw, extent=None):
        """Straight obstacle at ``height``, optionally limited to ``extent = (x0, x1)``."""
        return cls.from_function(lambda x: np.full_like(x, height), params, law, extent)

    @classmethod
    def from_function(cls, fn, params: StringParams, law: ContactLaw, extent=None):
        x = params.x
        active = np.ones(params.N, dtype=bool)
        if extent is not None:
            active = (x >= extent[0]) & (x <= extent[1])
        y_c = np.where(active, fn(x), 0.0)
        return cls(y_c, law, active)

    @classmethod
    def none(cls, params: StringParams):
        return cls(np.zeros(params.N), ContactLaw(0.0), np.zeros(params.N, dtype=bool))

    def terms(self, y, s, params: StringParams):
        """Contact residual vector and the diagonal of its Jacobian."""
        f = np.zeros_like(y)
        jd = np.zeros_like(y)
        idx = self._idx
        if idx.size:
            g, dg = discrete_gradient_pair(self.y_c[idx] - y[idx], s[idx], self.law)
            f[idx] = -params.xi * g
            jd[idx] = -params.xi * dg
        return f, jd

    def compression(self, y):
        return np.where(self.active, self.y_c - y, -np.inf)

    def energy(self, y, params: StringParams):
        idx = self._idx
        if not idx.size:
            return 0.0
        return params.dx * float(np.sum(contact_potential(self.y_c[idx] - y[idx], self.law)))

    def force(self, y, params: StringParams):
        """Total collision force ``dx * sum k_c [chi^alpha]``."""
        idx = self._idx
        if not idx.size:
            return 0.0
        chi = self.y_c[idx] - y[idx]
        return params.dx * float(np.sum(self.law.k_c * np.where(chi > 0, chi, 0.0) ** self.law.alpha))


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    tension: float
    bending: float
    contact: float

    @property
    def total(self):
        return self.kinetic + self.tension + self.bending + self.contact


@dataclass(frozen=True)
class NewtonOptions:
    """Stop when ``max|ds| <= tol_s * m`` and ``max|F| <= tol_f * m``.

    ``m`` is the largest magnitude among the displacement, scaled momentum
    and step entries, so the tolerances do not depend on the length unit.
    """

    tol_s: float = 1e-14
    tol_f: float = 1e-12
    max_iter: int = 50


DEFAULT_NEWTON = NewtonOptions()


class StringSolver:
    """Pre-assembled linear part plus a contact model; steps the scheme.

    ``contact`` is a :class:`BarrierProfile`, a tanpura ``BridgeModel`` or
    ``None``.
    """

    def __init__(self, params: StringParams, ops: SpatialOperators | None = None,
                 contact=None, options: NewtonOptions = DEFAULT_NEWTON):
        self.params = params
        self.ops = build_operators(params) if ops is None else ops
        self.contact = contact
        self.options = options
        self.kd = max(2, getattr(contact, "bandwidth", 0))
        lin = params.loss_stiffness * self.ops.D_band
        lin[-1] += params.loss_identity
        self.A_band = _banded.widen(lin, self.kd)
        self.iterations = []

    def _terms(self, y, s):
        if self.contact is None:
            return None, None
        return self.contact.terms(y, s, self.params)

    def residual(self, s, state: GridState):
        F = _banded.matvec(self.A_band, s) + 2.0 * (self.ops.apply(state.y) - state.q)
        f, _ = self._terms(state.y, s)
        if f is not None:
            F += f
        return F

    def jacobian_band(self, s, state: GridState):
        ab = self.A_band.copy()
        _, jac = self._terms(state.y, s)
        self._apply(ab, jac)
        return ab

    def _apply(self, ab, jac):
        if jac is None:
            return
        if isinstance(jac, np.ndarray):
            ab[-1] += jac
        else:
            start, block = jac
            _banded.add_block(ab, start, block)

    def solve(self, state: GridState, s_prev=None):
        """Newton solve for the step vector; returns ``(s, iterations)``.

        Tolerances are relative to the state magnitude.  A full step that
        fails to reduce the residual is halved (up to six times), which
        breaks the two-cycles Newton can fall into at contact kinks.
        """
        opts = self.options
        y, q = state.y, state.q
        c0 = 2.0 * (self.ops.apply(y) - q)
        s = 2.0 * q if s_prev is None else np.array(s_prev, dtype=float)
        scale = max(float(np.max(np.abs(y))), float(np.max(np.abs(q))))
        f_floor = 100.0 * np.finfo(float).eps * max(float(np.max(np.abs(c0))), scale)
        A = self.A_band
        fnorm = prev = math.inf
        s_old = ds = None
        lam = 1.0
        for it in range(opts.max_iter + 1):
            F = _banded.matvec(A, s) + c0
            f, jac = self._terms(y, s)
            if f is not None:
                F += f
            fnorm = float(np.max(np.abs(F)))
            if fnorm > prev and fnorm > f_floor and lam > 1.0 / 64:
                lam *= 0.5
                s = s_old - lam * ds
                continue
            ab = A.copy()
            self._apply(ab, jac)
            ds = _banded.cholesky_solve(ab, F)
            s_old, prev, lam = s, fnorm, 1.0
            s = s - ds
            step_scale = max(scale, float(np.max(np.abs(s))))
            if (float(np.max(np.abs(ds))) <= opts.tol_s * step_scale
                    and fnorm <= opts.tol_f * max(step_scale, f_floor)):
                return s, it
        raise NonConvergence(f"Newton did not converge in {opts.max_iter} iterations "
                             f"(|F|_inf = {fnorm:.3e})", step_index=state.n,
                             residual=fnorm, iterations=opts.max_iter)

    def step(self, state: GridState, s_prev=None):
        s, it = self.solve(state, s_prev)
        self.iterations.append(it)
        return GridState(state.y + s, s - state.q, state.n + 1), s

    def energy(self, state: GridState) -> EnergyBreakdown:
        return energy_string(state, self.ops, self.contact, self.params)


def residual_vec(s, state: GridState, ops: SpatialOperators, barrier, params: StringParams):
    return StringSolver(params, ops, barrier).residual(np.asarray(s, dtype=float), state)


def jacobian_vec(s, state: GridState, ops: SpatialOperators, barrier, params: StringParams):
    """Jacobian of :func:`residual_vec` in upper band storage (``kd = 2``)."""
    return StringSolver(params, ops, barrier).jacobian_band(np.asarray(s, dtype=float), state)


def solve_step_vec(state: GridState, ops: SpatialOperators, barrier, params: StringParams,
                   s_prev=None, options: NewtonOptions = DEFAULT_NEWTON):
    return StringSolver(params, ops, barrier, options).solve(state, s_prev)[0]


def step_string(state: GridState, ops: SpatialOperators, barrier, params: StringParams,
                s_prev=None, options: NewtonOptions = DEFAULT_NEWTON):
    s = solve_step_vec(state, ops, barrier, params, s_prev, options)
    return GridState(state.y + s, s - state.q, state.n + 1)


def energy_string(state: GridState, ops: SpatialOperators, contact, params: StringParams):
    u = ops.D1 @ state.y
    v = ops.R @ state.y
    dx = params.dx
    return EnergyBreakdown(
        kinetic=params.b * float(state.q @ state.q),
        tension=params.tau / (2.0 * dx) * float(u @ u),
        bending=params.EI / (2.0 * dx ** 3) * float(v @ v),
        contact=0.0 if contact is None else contact.energy(state.y, params),
    )


def energy_matrix_form(state: GridState, ops: SpatialOperators, barrier: BarrierProfile,
                       params: StringParams):
    """Total energy as ``b [q'q + y'Dy + zeta 1'[(y_c - y)^(alpha+1)]]``."""
    y, q = state.y, state.q
    idx = np.flatnonzero(barrier.active)
    chi = barrier.y_c[idx] - y[idx]
    a = barrier.law.alpha + 1
    pot = float(np.sum(np.where(chi > 0, chi, 0.0) ** a))
    return params.b * (float(q @ q) + float(y @ ops.D @ y) + params.zeta(barrier.law) * pot)


class InitialShape(str, enum.Enum):
    SINE_MODE = "sine_mode"
    TRIANGLE_PLUCK = "triangle_pluck"
    CUSTOM = "custom"


def initial_condition(kind, amplitude, params: StringParams, peak_position=None,
                      shape: Callable | np.ndarray | None = None) -> GridState:
    """Displacement sampled on the interior nodes with zero momentum.

    ``sine_mode`` gives ``amplitude * sin(pi x / L)``; ``triangle_pluck`` a hat
    with apex ``amplitude`` at ``peak_position``; ``custom`` takes ``shape``
    as a callable of ``x`` or an array of nodal values.
    """
    kind = InitialShape(kind)
    x, L = params.x, params.L
    if kind is InitialShape.SINE_MODE:
        y = amplitude * np.sin(np.pi * x / L)
    elif kind is InitialShape.TRIANGLE_PLUCK:
        xp = L / 2 if peak_position is None else float(peak_position)
        if not 0 < xp < L:
            raise ValueError("peak position must lie inside (0, L)")
        y = amplitude * np.where(x <= xp, x / xp, (L - x) / (L - xp))
    else:
        if shape is None:
            raise ValueError("custom initial condition needs a shape")
        y = shape(x) if callable(shape) else np.asarray(shape, dtype=float)
        y = amplitude * np.asarray(y, dtype=float)
        if y.shape != (params.N,):
            raise ValueError("custom shape must have one value per interior node")
    return GridState(np.asarray(y, dtype=float), np.zeros(params.N), 0)


@dataclass
class StringRun:
    """Per-sample energies, Newton counts and observed signals of a run."""

    params: StringParams
    kinetic: np.ndarray
    tension: np.ndarray
    bending: np.ndarray
    contact: np.ndarray
    iterations: np.ndarray
    final: GridState
    signals: dict = field(default_factory=dict)
    snapshots: np.ndarray | None = None

    @property
    def H(self):
        return self.kinetic + self.tension + self.bending + self.contact

    @property
    def t(self):
        return np.arange(len(self.kinetic)) * self.params.dt


def simulate_string(solver: StringSolver, initial: GridState, n_steps: int,
                    observers: Mapping[str, Callable[[GridState], float]] | None = None,
                    snapshot_every: int = 0) -> StringRun:
    """Step ``n_steps`` times, recording energy and ``observers`` at every sample."""
    observers = dict(observers or {})
    energies = np.empty((n_steps + 1, 4))
    signals = {k: np.empty(n_steps + 1) for k in observers}
    iters = np.zeros(n_steps, dtype=int)
    snaps = []
    state = initial

    def record(n, st):
        e = solver.energy(st)
        energies[n] = (e.kinetic, e.tension, e.bending, e.contact)
        for k, fn in observers.items():
            signals[k][n] = fn(st)
        if snapshot_every and n % snapshot_every == 0:
            snaps.append(st.y.copy())

    record(0, state)
    s = None
    for n in range(n_steps):
        try:
            s, iters[n] = solver.solve(state, s)
        except NonConvergence as exc:
            raise exc.at_step(n) from None
        state = GridState(state.y + s, s - state.q, state.n + 1)
        record(n + 1, state)
    return StringRun(
        params=solver.params,
        kinetic=energies[:, 0],
        tension=energies[:, 1],
        bending=energies[:, 2],
        contact=energies[:, 3],
        iterations=iters,
        final=state,
        signals=signals,
        snapshots=np.array(snaps) if snaps else None,
    )


def modal_frequencies(ops: SpatialOperators, params: StringParams):
    """Continuous-time angular frequencies of the spatially discrete string.

    Without contact the scheme is the trapezoidal rule applied to
    ``y'' = -(4 / dt^2) D y``.
    """
    lam = np.linalg.eigvalsh(ops.D)
    return 2.0 / params.dt * np.sqrt(np.clip(lam, 0.0, None))
