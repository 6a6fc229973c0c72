"""String meeting a curved bridge near a simply supported termination.

The bridge profile lives on a fine grid of spacing ``dx_b``.  String
displacements are mapped to that grid with a 4-point Lagrange interpolant
``I_b``; fine-grid contact forces come back through the scaled conjugate
``I_b* = (dx_b / dx) I_b'``, which keeps the scheme energy conserving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contact import ContactLaw, bracket_power, discrete_gradient_pair
from .stiffstring import (
    DEFAULT_NEWTON,
    GridState,
    NewtonOptions,
    SpatialOperators,
    StringParams,
    StringRun,
    StringSolver,
    simulate_string,
)

STENCIL = 4


def parabolic_profile(x, x_b, curvature=4.0):
    """Bridge heights ``-curvature (x_b - x)^2`` with the apex at ``x_b``."""
    return -curvature * (x_b - np.asarray(x, dtype=float)) ** 2


def lagrange_matrix(x_fine, dx, n_nodes):
    """Cubic Lagrange interpolation from nodes ``j dx`` (``j < n_nodes``) to ``x_fine``.

    Each row uses the four nodes around the point, shifted inwards at the
    ends of the node range.
    """
    x_fine = np.asarray(x_fine, dtype=float)
    if n_nodes < STENCIL:
        raise ValueError("need at least 4 nodes for cubic interpolation")
    pos = x_fine / dx
    j0 = np.clip(np.floor(pos).astype(int) - 1, 0, n_nodes - STENCIL)
    t = pos - j0
    M = np.zeros((x_fine.size, n_nodes))
    rows = np.arange(x_fine.size)
    for k in range(STENCIL):
        w = np.ones_like(t)
        for j in range(STENCIL):
            if j != k:
                w *= (t - j) / (k - j)
        M[rows, j0 + k] = w
    return M


@dataclass(frozen=True)
class BridgeModel:
    """Fine-grid bridge with its interpolation operators.

    ``I_b`` maps the ``N`` interior string nodes to the fine points; the
    string boundary nodes are fixed at zero so their columns are dropped.
    ``start`` is the first string column touched by the bridge.
    """

    x_b: float
    dx_b: float
    k_b: float
    x: np.ndarray
    y_b: np.ndarray
    I_b: np.ndarray
    dx: float
    start: int
    enabled: bool = True

    bandwidth = STENCIL - 1

    @property
    def width(self):
        return self.I_b.shape[1]

    @property
    def I_star(self):
        """Downsampling operator ``(dx_b / dx) I_b'``."""
        return (self.dx_b / self.dx) * self.I_b.T

    def beta(self, params: StringParams):
        return self.k_b * params.dt ** 2 / (2.0 * params.rhoA)

    @property
    def law(self):
        # k_b [chi^2] is the potential of a linear spring of stiffness 2 k_b
        return ContactLaw(2.0 * self.k_b, 1.0)

    def interpolation_full(self, params: StringParams):
        """Interpolation matrix over all ``N + 2`` nodes, boundaries included."""
        return lagrange_matrix(self.x, params.dx, params.N + 2)

    def fine(self, v):
        """String-grid vector sampled on the fine grid."""
        return self.I_b @ v[self.start:self.start + self.width]

    def compression(self, y):
        return self.y_b - self.fine(y)

    def terms(self, y, s, params: StringParams):
        f = np.zeros_like(y)
        if not self.enabled:
            return f, None
        sl = slice(self.start, self.start + self.width)
        chi = self.y_b - self.I_b @ y[sl]
        sb = self.I_b @ s[sl]
        live = (chi > 0) | (chi > sb)
        if not live.any():
            return f, None
        I = self.I_b[live]
        g, dg = discrete_gradient_pair(chi[live], sb[live], self.law)
        scale = self.dx_b / self.dx * params.xi
        f[sl] = -scale * (I.T @ g)
        block = (I.T * (-scale * dg)) @ I
        return f, (self.start, block)

    def energy(self, y, params: StringParams):
        if not self.enabled:
            return 0.0
        chi = self.compression(y)
        return self.dx_b * self.k_b * float(np.sum(bracket_power(chi, 2.0)))


def build_bridge(params: StringParams, x_b=5e-3, dx_b=2e-4, k_b=5e8, extent=None,
                 curvature=4.0, enabled=True) -> BridgeModel:
    """Sample the parabolic bridge on ``x = dx_b, 2 dx_b, ...`` over ``extent``.

    ``extent`` defaults to ``(dx_b, x_b + 5 mm)``.
    """
    if not 0 < dx_b < params.dx:
        raise ValueError("bridge grid must be finer than the string grid")
    if not k_b > 0:
        raise ValueError("k_b must be positive")
    lo, hi = (dx_b, x_b + 5e-3) if extent is None else extent
    if not 0 < lo < hi < params.L:
        raise ValueError("bridge extent must lie inside (0, L)")
    i0 = int(np.ceil(lo / dx_b - 1e-9))
    i1 = int(np.floor(hi / dx_b + 1e-9))
    x = np.arange(i0, i1 + 1) * dx_b
    full = lagrange_matrix(x, params.dx, params.N + 2)
    cols = np.flatnonzero(np.any(full != 0.0, axis=0))
    if cols[-1] > params.N:
        raise ValueError("bridge extent too close to the right end for the stencil")
    first = max(int(cols[0]), 1)
    last = int(cols[-1])
    I_b = full[:, first:last + 1]
    return BridgeModel(x_b=x_b, dx_b=dx_b, k_b=k_b, x=x, y_b=parabolic_profile(x, x_b, curvature),
                       I_b=I_b, dx=params.dx, start=first - 1, enabled=enabled)


def bridge_force(s_bar, y_bar, model: BridgeModel, params: StringParams):
    """Fine-grid contact term ``beta_b ([(y_b - y - s)^2] - [(y_b - y)^2]) / s``.

    Uses the cancellation-free quotient, with ``-2 beta_b [chi]`` as ``s -> 0``.
    """
    chi = model.y_b - np.asarray(y_bar, dtype=float)
    g, _ = discrete_gradient_pair(chi, np.asarray(s_bar, dtype=float), model.law)
    return -params.xi * g


def residual_tanpura(s, state: GridState, ops: SpatialOperators, model: BridgeModel,
                     params: StringParams):
    return StringSolver(params, ops, model).residual(np.asarray(s, dtype=float), state)


def jacobian_tanpura(s, state: GridState, ops: SpatialOperators, model: BridgeModel,
                     params: StringParams):
    """Jacobian in upper band storage with half-bandwidth 3."""
    return StringSolver(params, ops, model).jacobian_band(np.asarray(s, dtype=float), state)


def nut_force(state: GridState, params: StringParams):
    """Transverse reaction at ``x = 0``: ``tau y'(0) - EI y'''(0)``.

    One-sided differences with the simply supported ghost ``y_{-1} = -y_1``.
    """
    y1, y2 = state.y[0], state.y[1]
    dx = params.dx
    return params.tau * y1 / dx - params.EI * (y2 - 2.0 * y1) / dx ** 3


def simulate_tanpura(params: StringParams, model: BridgeModel | None, initial: GridState,
                     n_steps: int, ops: SpatialOperators | None = None,
                     options: NewtonOptions = DEFAULT_NEWTON, snapshot_every: int = 0) -> StringRun:
    """Run the string/bridge system; records ``nut_force`` and ``compression``."""
    solver = StringSolver(params, ops, model, options)
    observers = {"nut_force": lambda st: nut_force(st, params)}
    if model is not None and model.enabled:
        observers["compression"] = lambda st: max(float(np.max(model.compression(st.y))), 0.0)
    return simulate_string(solver, initial, n_steps, observers, snapshot_every)


def tanpura_params(dt=1.0 / 176400, dx=3.1e-3, gamma=0.1, eta=5e-8, **overrides) -> StringParams:
    """String parameters of the measured instrument, simply supported at both ends."""
    kw = dict(rhoA=5.58e-4, tau=31.47, EI=8.35e-5, L=0.628, dt=dt, gamma=gamma, eta=eta,
              bc_left="simply_supported", bc_right="simply_supported")
    kw.update(overrides)
    L = kw.pop("L")
    return StringParams.from_dx(L, dx, **kw)
