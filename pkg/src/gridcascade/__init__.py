"""Cascading branch-outage simulation and worst-case fluctuation identification
for DC-approximated power transmission networks."""

from .cascade_sim import (
    CascadeReport,
    CascadeState,
    ControlSchedule,
    TripConfig,
    cascade_step,
    simulate,
    trip_factor,
    trip_factors,
)
from .dc_powerflow import (
    FlowSolution,
    IslandPartition,
    SingularIslandError,
    find_islands,
    nodal_admittance,
    pseudo_inverse,
    solve_flow,
)
from .grid_model import (
    Branch,
    CaseError,
    CaseParseError,
    CaseValidationError,
    Network,
    incidence,
    parse_case,
    selection,
    serialize_case,
)
from .worst_case_id import (
    CostateSequence,
    IdentificationConfig,
    IdentifiedSolution,
    Trajectory,
    control_from_state,
    control_jacobian,
    costate_sequence,
    forward_trajectory,
    identify,
    residual,
    terminal_jacobian,
    trip_jacobian,
)

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "CascadeReport",
    "CascadeState",
    "CaseError",
    "CaseParseError",
    "CaseValidationError",
    "ControlSchedule",
    "CostateSequence",
    "FlowSolution",
    "IdentificationConfig",
    "IdentifiedSolution",
    "IslandPartition",
    "Network",
    "SingularIslandError",
    "Trajectory",
    "TripConfig",
    "cascade_step",
    "control_from_state",
    "control_jacobian",
    "costate_sequence",
    "find_islands",
    "forward_trajectory",
    "identify",
    "incidence",
    "nodal_admittance",
    "parse_case",
    "pseudo_inverse",
    "residual",
    "selection",
    "serialize_case",
    "simulate",
    "solve_flow",
    "terminal_jacobian",
    "trip_factor",
    "trip_factors",
    "trip_jacobian",
]
