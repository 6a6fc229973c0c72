"""Energy-conserving simulation of lumped and distributed vibro-impact systems."""

__version__ = "0.1.0"

from .contact import (
    ContactLaw,
    bracket_power,
    contact_discrete_gradient,
    contact_discrete_gradient_derivative,
    contact_force,
    contact_potential,
)
from .errors import NonConvergence, NoPeriodicity, ZeroInitialEnergy
from .lumped import LumpedParams, LumpedState, Scheme, hamiltonian, simulate, solve_step, step
from .stiffstring import (
    BarrierProfile,
    Boundary,
    GridState,
    StringParams,
    StringSolver,
    build_operators,
    energy_string,
    initial_condition,
    simulate_string,
)
from .tanpura import BridgeModel, build_bridge, nut_force, simulate_tanpura

__all__ = [
    "BarrierProfile", "Boundary", "BridgeModel", "ContactLaw", "GridState", "LumpedParams",
    "LumpedState", "NoPeriodicity", "NonConvergence", "Scheme", "StringParams", "StringSolver",
    "ZeroInitialEnergy", "bracket_power", "build_bridge", "build_operators",
    "contact_discrete_gradient", "contact_discrete_gradient_derivative", "contact_force",
    "contact_potential", "energy_string", "hamiltonian", "initial_condition", "nut_force",
    "simulate", "simulate_string", "simulate_tanpura", "solve_step", "step",
]
