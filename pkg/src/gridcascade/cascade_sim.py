"""Cascading branch-outage simulation.

One cascading step solves the DC flow at the current branch admittances
(with the step's injection fluctuation added on selected buses), applies the
trip function to every branch, and multiplies the admittance vector
elementwise by the resulting factors.  Smooth mode uses a differentiable
logistic surrogate for the circuit breaker; hard mode severs a branch
outright when its flow magnitude exceeds the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .dc_powerflow import (
    DEFAULT_LIVE_THRESHOLD,
    SingularIslandError,
    find_islands,
    live_branches,
    solve_flow,
)
from .grid_model import Network

TRIP_MODES = ("smooth", "hard")


class CascadeStepError(RuntimeError):
    """Flow solve failed during a cascading step."""


@dataclass(frozen=True)
class TripConfig:
    """Trip-function parameters: sharpness sigma and smooth/hard mode."""

    sigma: float = 1.0
    mode: str = "smooth"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.mode not in TRIP_MODES:
            raise ValueError(f"mode must be one of {TRIP_MODES}, got {self.mode!r}")


def trip_factor(p: float, c: float, cfg: TripConfig) -> float:
    """Surviving-admittance factor for one branch at flow p, threshold c."""
    return float(trip_factors(np.array([p]), np.array([c]), cfg)[0])


def trip_factors(flows: np.ndarray, thresholds: np.ndarray, cfg: TripConfig) -> np.ndarray:
    """Vector of trip factors, one per branch.

    Smooth mode: 1 / (1 + exp(sigma * (p^2 - c^2))), differentiable in p,
    symmetric in flow sign, and tending to the 0/1 step as sigma grows.
    Hard mode: 1 if |p| <= c else 0.
    """
    flows = np.asarray(flows, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    if cfg.mode == "hard":
        return (np.abs(flows) <= thresholds).astype(float)
    return expit(-cfg.sigma * (flows * flows - thresholds * thresholds))


def trip_factor_derivatives(
    flows: np.ndarray, thresholds: np.ndarray, cfg: TripConfig
) -> np.ndarray:
    """d(trip factor)/d(flow) per branch for the smooth trip function."""
    if cfg.mode != "smooth":
        raise ValueError("trip-factor derivative is defined for smooth mode only")
    g = trip_factors(flows, thresholds, cfg)
    return -2.0 * cfg.sigma * np.asarray(flows) * g * (1.0 - g)


@dataclass(frozen=True, eq=False)
class ControlSchedule:
    """Per-step fluctuation vectors plus the bus-selection matrix.

    `controls` has shape (m, n_buses); the selection matrix masks entries on
    unselected buses when forming the effective injections.
    """

    controls: np.ndarray
    selection: np.ndarray

    @classmethod
    def zeros(cls, net: Network, m: int, selection: np.ndarray | None = None) -> "ControlSchedule":
        sel = np.zeros((net.n_buses, net.n_buses)) if selection is None else selection
        return cls(controls=np.zeros((m, net.n_buses)), selection=sel)

    @classmethod
    def on_buses(cls, net: Network, bus_ids, values) -> "ControlSchedule":
        """Build a schedule from per-step values on 1-based `bus_ids`.

        `values` is an (m, len(bus_ids)) array-like: row k holds the step-k
        fluctuation on each selected bus.
        """
        from .grid_model import selection as make_selection

        sel = make_selection(net, bus_ids)
        values = np.atleast_2d(np.asarray(values, dtype=float))
        controls = np.zeros((values.shape[0], net.n_buses))
        for j, bus_id in enumerate(bus_ids):
            controls[:, bus_id - 1] = values[:, j]
        return cls(controls=controls, selection=sel)

    @property
    def n_steps(self) -> int:
        return self.controls.shape[0]


@dataclass(frozen=True, eq=False)
class CascadeState:
    """Admittance state at one cascading step.

    `flows` are the branch flows computed while producing this state (the
    transition flows of the previous step); None for the initial state.
    `tripped` lists 0-based indices of branches newly classified dead.
    """

    step_index: int
    y_p: np.ndarray
    flows: np.ndarray | None = None
    tripped: tuple[int, ...] = ()


def initial_state(net: Network) -> CascadeState:
    return CascadeState(step_index=0, y_p=net.base_admittances.copy())


def step_transition(
    net: Network,
    y_p: np.ndarray,
    injections: np.ndarray,
    cfg: TripConfig,
    live_threshold: float = DEFAULT_LIVE_THRESHOLD,
):
    """Core of one cascading step; returns (flows, next admittances, partition).

    No validation or clamping: callers may evaluate the map anywhere.
    """
    partition = find_islands(net, y_p, live_threshold)
    sol = solve_flow(net, y_p, injections, partition)
    factors = trip_factors(sol.flows, net.thresholds, cfg)
    return sol.flows, factors * y_p, partition


def cascade_step(
    state: CascadeState,
    u_k: np.ndarray,
    selection: np.ndarray,
    net: Network,
    cfg: TripConfig,
    live_threshold: float = DEFAULT_LIVE_THRESHOLD,
) -> CascadeState:
    """Advance the cascade one step under fluctuation u_k on selected buses."""
    injections = net.injections + selection @ np.asarray(u_k, dtype=float)
    try:
        flows, y_next, _ = step_transition(net, state.y_p, injections, cfg, live_threshold)
    except SingularIslandError as exc:
        raise CascadeStepError(f"flow solve failed at step {state.step_index}: {exc}") from exc
    was_live = live_branches(net, state.y_p, live_threshold)
    now_live = live_branches(net, y_next, live_threshold)
    newly_dead = tuple(int(r) for r in np.nonzero(was_live & ~now_live)[0])
    return CascadeState(
        step_index=state.step_index + 1, y_p=y_next, flows=flows, tripped=newly_dead
    )


@dataclass(frozen=True, eq=False)
class StepRecord:
    """Report entry for step k: transition flows and post-step admittances."""

    k: int
    tripped: tuple[int, ...]  # 1-based branch ids
    flows: np.ndarray  # dead branches reported as exactly 0
    y_p: np.ndarray


@dataclass(frozen=True, eq=False)
class CascadeReport:
    """Machine-readable summary of one cascade run."""

    steps: tuple[StepRecord, ...]
    islands: tuple[tuple[int, ...], ...]  # 1-based bus ids
    island_count: int
    terminal_norm_sq: float
    cost_j: float
    terminal_y_p: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "steps": [
                {
                    "k": rec.k,
                    "tripped": list(rec.tripped),
                    "flows": [float(x) for x in rec.flows],
                    "y_p": [float(x) for x in rec.y_p],
                }
                for rec in self.steps
            ],
            "islands": [list(isl) for isl in self.islands],
            "island_count": self.island_count,
            "terminal_norm_sq": self.terminal_norm_sq,
            "cost_J": self.cost_j,
        }


def as_epsilon_vector(epsilon, m: int) -> np.ndarray:
    """Normalize a scalar or per-step control penalty to a length-m vector."""
    eps = np.asarray(epsilon, dtype=float)
    if eps.ndim == 0:
        eps = np.full(m, float(eps))
    if eps.shape != (m,):
        raise ValueError(f"epsilon must be scalar or length {m}, got shape {eps.shape}")
    if m > 0 and not np.all(eps > 0):
        raise ValueError("epsilon entries must be positive")
    return eps


def simulate(
    net: Network,
    schedule: ControlSchedule,
    m: int,
    cfg: TripConfig,
    live_threshold: float = DEFAULT_LIVE_THRESHOLD,
    epsilon=10.0,
) -> CascadeReport:
    """Run m cascading steps from the base admittances and report the outcome.

    The cost is the squared terminal admittance norm plus the
    epsilon-weighted control energy of the schedule.
    """
    if m < 0:
        raise ValueError(f"step count must be >= 0, got {m}")
    if schedule.n_steps < m:
        raise ValueError(f"schedule has {schedule.n_steps} control vectors, need {m}")
    eps = as_epsilon_vector(epsilon, m)

    state = initial_state(net)
    records: list[StepRecord] = []
    for k in range(m):
        dead_before = ~live_branches(net, state.y_p, live_threshold)
        state = cascade_step(state, schedule.controls[k], schedule.selection, net, cfg, live_threshold)
        reported_flows = state.flows.copy()
        reported_flows[dead_before] = 0.0
        records.append(
            StepRecord(
                k=k,
                tripped=tuple(r + 1 for r in state.tripped),
                flows=reported_flows,
                y_p=state.y_p.copy(),
            )
        )

    partition = find_islands(net, state.y_p, live_threshold)
    islands = tuple(tuple(b + 1 for b in isl) for isl in partition.islands)
    terminal_norm_sq = float(state.y_p @ state.y_p)
    control_energy = sum(
        float(eps[k] * (schedule.controls[k] @ schedule.controls[k])) for k in range(m)
    )
    return CascadeReport(
        steps=tuple(records),
        islands=islands,
        island_count=partition.q,
        terminal_norm_sq=terminal_norm_sq,
        cost_j=terminal_norm_sq + control_energy,
        terminal_y_p=state.y_p.copy(),
    )
