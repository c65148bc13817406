"""Worst-case fluctuation identification via optimal-control necessary conditions.

The unknowns are the stacked smooth-cascade admittance states for steps
1..m.  At a root of the residual, the trajectory satisfies the cascade state
equation with the stationary controls

    u_k = -(1/eps_k) * (d y_{k+1} / d u_k)^T (d y_m / d y_{k+1})^T y_m,

which is first-order optimality of the damage cost (squared terminal
admittance norm plus eps-weighted control energy).  The terminal-state
Jacobians are finite differences of the multi-step cascade map; the
trip-function Jacobian has an exact diagonal form (the trip function acts
elementwise) with a finite-difference fallback retained as an oracle.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cascade_sim import (
    TripConfig,
    as_epsilon_vector,
    step_transition,
    trip_factor_derivatives,
    trip_factors,
)
from .dc_powerflow import (
    DEFAULT_LIVE_THRESHOLD,
    SingularIslandError,
    find_islands,
    nodal_admittance,
    pseudo_inverse,
)
from .grid_model import Network, incidence

TRIP_JACOBIAN_MODES = ("analytic", "fd")


class SingularNewtonError(RuntimeError):
    """The Newton system could not be solved."""

    def __init__(self):
        super().__init__(
            "Newton Jacobian is singular; try a different initial trajectory "
            "or a larger finite-difference step delta"
        )


@dataclass(frozen=True)
class IdentificationConfig:
    """Parameters of the identification solve.

    epsilon may be a scalar or a per-step sequence of length `steps`.
    delta is the finite-difference step used both for the terminal-state
    Jacobians and for the Newton Jacobian of the residual.
    """

    epsilon: object = 10.0
    steps: int = 4
    sigma: float = 1.0
    delta: float = 0.01
    newton_tol: float = 1e-8
    newton_max_iter: int = 60
    max_step_halvings: int = 30
    live_threshold: float = DEFAULT_LIVE_THRESHOLD
    trip_jacobian_mode: str = "analytic"
    inner_tol: float = 1e-12
    inner_max_iter: int = 100
    n_threads: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        as_epsilon_vector(self.epsilon, self.steps)
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.newton_tol > 0:
            raise ValueError(f"newton_tol must be positive, got {self.newton_tol}")
        if self.trip_jacobian_mode not in TRIP_JACOBIAN_MODES:
            raise ValueError(f"trip_jacobian_mode must be one of {TRIP_JACOBIAN_MODES}")

    @property
    def trip_config(self) -> TripConfig:
        return TripConfig(sigma=self.sigma, mode="smooth")

    @property
    def epsilon_vector(self) -> np.ndarray:
        return as_epsilon_vector(self.epsilon, self.steps)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Smooth-cascade trajectory: admittances y (steps+1 rows), the
    transition flows of each step, and the controls that produced them."""

    y: np.ndarray
    flows: np.ndarray
    controls: np.ndarray


@dataclass(frozen=True, eq=False)
class CostateSequence:
    """Adjoint vectors for steps 1..m; the last equals twice the terminal
    admittance vector."""

    lambdas: np.ndarray


@dataclass(frozen=True, eq=False)
class IdentifiedSolution:
    controls: np.ndarray  # (m, n_buses)
    trajectory: np.ndarray  # (m+1, n_branches), row 0 = base admittances
    residual_norm: float
    cost: float
    converged: bool
    iterations: int

    def to_dict(self) -> dict:
        return {
            "controls": [[float(x) for x in row] for row in self.controls],
            "trajectory": [[float(x) for x in row] for row in self.trajectory],
            "residual_norm": float(self.residual_norm),
            "cost": float(self.cost),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }


# ---------------------------------------------------------------------------
# Forward simulation (single state and batched)
# ---------------------------------------------------------------------------

def forward_trajectory(
    net: Network, selection: np.ndarray, controls: np.ndarray, cfg: IdentificationConfig
) -> Trajectory:
    """Run the smooth cascade from the base admittances under `controls`."""
    m, n = cfg.steps, net.n_branches
    controls = np.asarray(controls, dtype=float)
    y = np.empty((m + 1, n))
    flows = np.empty((m, n))
    y[0] = net.base_admittances
    trip_cfg = cfg.trip_config
    for k in range(m):
        injections = net.injections + selection @ controls[k]
        flows[k], y[k + 1], _ = step_transition(
            net, y[k], injections, trip_cfg, cfg.live_threshold
        )
    return Trajectory(y=y, flows=flows, controls=controls)


def _batched_flows(
    net: Network,
    y_batch: np.ndarray,
    injections: np.ndarray,
    cfg: IdentificationConfig,
) -> np.ndarray:
    """Branch flows for a batch of admittance states.

    `injections` is one shared vector or one row per state.  Rows are
    grouped by identical live/dead classification so each group shares one
    island partition; flows come from batched reduced solves, matching the
    pseudo-inverse route up to rounding.
    """
    a = incidence(net)
    batch = np.asarray(y_batch, dtype=float)
    n_rows = batch.shape[0]
    inj = np.broadcast_to(np.asarray(injections, dtype=float), (n_rows, net.n_buses))
    flows = np.empty_like(batch)

    live = batch >= cfg.live_threshold * net.base_admittances
    groups: dict[bytes, list[int]] = {}
    for i, row in enumerate(live):
        groups.setdefault(row.tobytes(), []).append(i)

    for rows in groups.values():
        idx = np.array(rows)
        partition = find_islands(net, batch[idx[0]], cfg.live_threshold)
        y_g = batch[idx]
        y_b = np.einsum("gr,rj,rk->gjk", y_g, a, a)
        theta = np.zeros((len(idx), net.n_buses))
        for isl in partition.islands:
            if len(isl) == 1:
                continue
            non_ref = list(isl[1:])
            reduced = y_b[np.ix_(np.arange(len(idx)), non_ref, non_ref)]
            rhs = inj[idx][:, non_ref]
            try:
                sol = np.linalg.solve(reduced, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise SingularIslandError(isl, str(exc)) from exc
            theta[:, non_ref] = sol
        flows[idx] = y_g * (theta @ a.T)
    return flows


def _batched_step(
    net: Network,
    y_batch: np.ndarray,
    injections: np.ndarray,
    cfg: IdentificationConfig,
) -> np.ndarray:
    """Advance a batch of admittance states one smooth step."""
    batch = np.asarray(y_batch, dtype=float)
    flows = _batched_flows(net, batch, injections, cfg)
    factors = trip_factors(flows, net.thresholds, cfg.trip_config)
    return factors * batch


def _resimulate_batch(
    net: Network,
    selection: np.ndarray,
    controls: np.ndarray,
    cfg: IdentificationConfig,
    y_start_batch: np.ndarray,
    k_start: int,
) -> np.ndarray:
    """Terminal admittances after running steps k_start..m-1 on each row."""
    y = np.asarray(y_start_batch, dtype=float).copy()
    for j in range(k_start, cfg.steps):
        injections = net.injections + selection @ controls[j]
        y = _batched_step(net, y, injections, cfg)
    return y


# ---------------------------------------------------------------------------
# Jacobian blocks of the necessary-condition system
# ---------------------------------------------------------------------------

def trip_jacobian(
    flows: np.ndarray, net: Network, cfg: IdentificationConfig, mode: str | None = None
) -> np.ndarray:
    """Jacobian of the trip-factor vector with respect to the flows.

    Analytic mode is the exact diagonal (the trip function is elementwise);
    fd mode stacks forward-difference columns with step delta.
    """
    mode = cfg.trip_jacobian_mode if mode is None else mode
    flows = np.asarray(flows, dtype=float)
    if mode == "analytic":
        return np.diag(trip_factor_derivatives(flows, net.thresholds, cfg.trip_config))
    if mode != "fd":
        raise ValueError(f"unknown trip_jacobian mode {mode!r}")
    n = net.n_branches
    g0 = trip_factors(flows, net.thresholds, cfg.trip_config)
    cols = np.empty((n, n))
    for i in range(n):
        shifted = flows.copy()
        shifted[i] += cfg.delta
        cols[:, i] = (trip_factors(shifted, net.thresholds, cfg.trip_config) - g0) / cfg.delta
    return cols


def control_jacobian(
    k: int,
    traj: Trajectory,
    net: Network,
    selection: np.ndarray,
    cfg: IdentificationConfig,
) -> np.ndarray:
    """Sensitivity of the step-(k+1) admittances to the step-k fluctuation.

    Equals diag(y_k) * dG/dP * diag(y_k) * A * pinv(A^T diag(y_k) A) * Lambda;
    columns at unselected buses are identically zero.
    """
    y_k = traj.y[k]
    p_k = traj.flows[k]
    a = incidence(net)
    partition = find_islands(net, y_k, cfg.live_threshold)
    pinv = pseudo_inverse(nodal_admittance(a, y_k), partition)
    dg = trip_jacobian(p_k, net, cfg)
    return (y_k[:, None] * dg) @ (y_k[:, None] * a) @ pinv @ selection


def terminal_jacobian(
    k: int,
    traj: Trajectory,
    net: Network,
    selection: np.ndarray,
    cfg: IdentificationConfig,
) -> np.ndarray:
    """Jacobian of the terminal admittances with respect to the step-(k+1) state.

    Column i is the forward difference of re-running the smooth cascade from
    step k+1 (controls held fixed) with the i-th admittance nudged by delta.
    For k = m-1 the chain is empty and the result is the identity.
    """
    m, n = cfg.steps, net.n_branches
    if k == m - 1:
        return np.eye(n)
    start = traj.y[k + 1]
    batch = np.vstack([start + cfg.delta * np.eye(n), start[None, :]])
    terminal = _resimulate_batch(net, selection, traj.controls, cfg, batch, k + 1)
    return (terminal[:n] - terminal[n]).T / cfg.delta


def _stationary_control(
    k: int,
    traj: Trajectory,
    phi: np.ndarray,
    net: Network,
    selection: np.ndarray,
    cfg: IdentificationConfig,
) -> np.ndarray:
    """Control formula given the terminal Jacobian for step k."""
    eps_k = cfg.epsilon_vector[k]
    cj = control_jacobian(k, traj, net, selection, cfg)
    y_m = traj.y[-1]
    return -(1.0 / eps_k) * (cj.T @ (phi.T @ y_m))


def control_from_state(
    k: int,
    traj: Trajectory,
    net: Network,
    selection: np.ndarray,
    cfg: IdentificationConfig,
) -> np.ndarray:
    """Stationary control at step k for the given trajectory."""
    phi = terminal_jacobian(k, traj, net, selection, cfg)
    return _stationary_control(k, traj, phi, net, selection, cfg)


def _all_terminal_jacobians(
    traj: Trajectory, net: Network, selection: np.ndarray, cfg: IdentificationConfig
) -> list[np.ndarray]:
    """Terminal Jacobians for every step, sharing one batched re-simulation.

    Rows for all pending steps are advanced together; per-row results are
    identical to calling terminal_jacobian step by step.
    """
    m, n = cfg.steps, net.n_branches
    phis: list[np.ndarray | None] = [None] * m
    phis[m - 1] = np.eye(n)
    if m == 1:
        return phis
    eye_delta = cfg.delta * np.eye(n)
    states: dict[int, np.ndarray] = {}
    for j in range(1, m):
        start = traj.y[j]
        states[j - 1] = np.vstack([start[None, :] + eye_delta, start[None, :]])
        active = sorted(states)
        stacked = np.vstack([states[k] for k in active])
        injections = net.injections + selection @ traj.controls[j]
        stacked = _batched_step(net, stacked, injections, cfg)
        for i, k in enumerate(active):
            states[k] = stacked[i * (n + 1):(i + 1) * (n + 1)]
    for k in range(m - 1):
        term = states[k]
        phis[k] = (term[:n] - term[n]).T / cfg.delta
    return phis


def costate_sequence(
    traj: Trajectory, net: Network, selection: np.ndarray, cfg: IdentificationConfig
) -> CostateSequence:
    """Adjoint vectors lambda_k = 2 (d y_m / d y_k)^T y_m for k = 1..m."""
    m, n = cfg.steps, net.n_branches
    y_m = traj.y[-1]
    lambdas = np.empty((m, n))
    for k in range(1, m + 1):
        phi = terminal_jacobian(k - 1, traj, net, selection, cfg)
        lambdas[k - 1] = 2.0 * (phi.T @ y_m)
    return CostateSequence(lambdas=lambdas)


# ---------------------------------------------------------------------------
# Residual of the necessary-condition system and its Newton solve
# ---------------------------------------------------------------------------

INNER_FD_STEP = 1e-6
INNER_SWITCH_TOL = 1e-3


def _self_consistent_controls(
    y_full: np.ndarray, net: Network, selection: np.ndarray, cfg: IdentificationConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Resolve the control/flow fixed point for a fixed admittance trajectory.

    The stationary-control formula needs the flows, which themselves depend
    on the controls.  The fixed point u = formula(flows(u)) is the limit of
    iterated substitution starting from zero controls; plain iteration runs
    until the updates are small, then a chord-Newton polish drives the same
    limit to inner_tol.  The flows are recomputed once at the final controls.
    """
    m = cfg.steps

    def flows_at(controls_now: np.ndarray) -> np.ndarray:
        injections = net.injections + controls_now @ selection.T
        return _batched_flows(net, y_full[:m], injections, cfg)

    sel_idx = np.flatnonzero(np.diag(selection) > 0.5)
    if sel_idx.size == 0:
        controls = np.zeros((m, net.n_buses))
        return controls, flows_at(controls)

    def expand(u_flat: np.ndarray) -> np.ndarray:
        controls_now = np.zeros((m, net.n_buses))
        controls_now[:, sel_idx] = u_flat.reshape(m, sel_idx.size)
        return controls_now

    def substitute(u_flat: np.ndarray) -> np.ndarray:
        controls_now = expand(u_flat)
        traj = Trajectory(y=y_full, flows=flows_at(controls_now), controls=controls_now)
        phis = _all_terminal_jacobians(traj, net, selection, cfg)
        updated = np.stack(
            [_stationary_control(k, traj, phis[k], net, selection, cfg) for k in range(m)]
        )
        return updated[:, sel_idx].ravel()

    dim = m * sel_idx.size
    budget = cfg.inner_max_iter

    u = np.zeros(dim)
    for _ in range(budget):
        updated = substitute(u)
        change = float(np.max(np.abs(updated - u)))
        u = updated
        budget -= 1
        if change <= INNER_SWITCH_TOL:
            break

    h = u - substitute(u)
    h_norm = float(np.max(np.abs(h)))
    jac: np.ndarray | None = None
    jac_is_fresh = False
    while budget > 0 and h_norm > cfg.inner_tol:
        if jac is None:
            jac = np.empty((dim, dim))
            for j in range(dim):
                shifted = u.copy()
                shifted[j] += INNER_FD_STEP
                jac[:, j] = ((shifted - substitute(shifted)) - h) / INNER_FD_STEP
            jac_is_fresh = True
        try:
            du = np.linalg.solve(jac, -h)
        except np.linalg.LinAlgError:
            du = -h
        alpha, accepted = 1.0, False
        for _ in range(25):
            u_try = u + alpha * du
            h_try = u_try - substitute(u_try)
            h_try_norm = float(np.max(np.abs(h_try)))
            if h_try_norm < h_norm:
                accepted = True
                break
            alpha *= 0.5
        budget -= 1
        if not accepted:
            if jac_is_fresh:
                break  # even a fresh Jacobian makes no progress
            jac = None  # stale chord Jacobian; refresh and retry
            continue
        jac_is_fresh = False
        u, h, h_norm = u_try, h_try, h_try_norm

    controls = expand(u)
    return controls, flows_at(controls)


def residual(
    y_guess: np.ndarray, net: Network, selection: np.ndarray, cfg: IdentificationConfig
) -> np.ndarray:
    """Stacked defect of the state equation under the stationary controls.

    `y_guess` stacks the admittance vectors for steps 1..m; step 0 is fixed
    to the base admittances.  A zero residual means the trajectory and the
    controls recovered from it satisfy the full necessary-condition system.
    The guess is evaluated as-is (no clamping to [0, base]).
    """
    m, n = cfg.steps, net.n_branches
    y_guess = np.asarray(y_guess, dtype=float).reshape(m, n)
    y_full = np.vstack([net.base_admittances[None, :], y_guess])
    controls, flows = _self_consistent_controls(y_full, net, selection, cfg)
    trip_cfg = cfg.trip_config
    res = np.empty((m, n))
    for k in range(m):
        res[k] = trip_factors(flows[k], net.thresholds, trip_cfg) * y_full[k] - y_full[k + 1]
    return res.ravel()


def _fd_jacobian(fun, z: np.ndarray, f0: np.ndarray, delta: float, n_threads: int) -> np.ndarray:
    """Forward-difference Jacobian of fun at z; columns are independent."""
    dim = z.size
    jac = np.empty((f0.size, dim))

    def column(j: int) -> np.ndarray:
        shifted = z.copy()
        shifted[j] += delta
        return (fun(shifted) - f0) / delta

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            for j, col in enumerate(pool.map(column, range(dim))):
                jac[:, j] = col
    else:
        for j in range(dim):
            jac[:, j] = column(j)
    return jac


def identify(
    net: Network, selection: np.ndarray, cfg: IdentificationConfig
) -> IdentifiedSolution:
    """Solve the necessary-condition system by damped Newton.

    Starts from the zero-control smooth trajectory.  Non-convergence within
    the iteration budget returns the best iterate with converged=False;
    a singular Newton Jacobian raises SingularNewtonError.
    """
    m, n = cfg.steps, net.n_branches

    def res_fn(z: np.ndarray) -> np.ndarray:
        return residual(z, net, selection, cfg)

    traj0 = forward_trajectory(net, selection, np.zeros((m, net.n_buses)), cfg)
    z = traj0.y[1:].ravel().copy()
    r = res_fn(z)
    r_norm = float(np.linalg.norm(r))
    iterations = 0

    while r_norm > cfg.newton_tol and iterations < cfg.newton_max_iter:
        jac = _fd_jacobian(res_fn, z, r, cfg.delta, cfg.n_threads)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularNewtonError() from exc
        if not np.all(np.isfinite(step)):
            raise SingularNewtonError()

        alpha = 1.0
        accepted = False
        for _ in range(cfg.max_step_halvings + 1):
            z_try = z + alpha * step
            r_try = res_fn(z_try)
            r_try_norm = float(np.linalg.norm(r_try))
            if r_try_norm < r_norm:
                accepted = True
                break
            alpha *= 0.5
        iterations += 1
        if not accepted:
            break
        z, r, r_norm = z_try, r_try, r_try_norm

    converged = r_norm <= cfg.newton_tol
    y_full = np.vstack([net.base_admittances[None, :], z.reshape(m, n)])
    controls, _ = _self_consistent_controls(y_full, net, selection, cfg)
    eps = cfg.epsilon_vector
    cost = float(y_full[-1] @ y_full[-1]) + float(
        sum(eps[k] * (controls[k] @ controls[k]) for k in range(m))
    )
    return IdentifiedSolution(
        controls=controls,
        trajectory=y_full,
        residual_norm=r_norm,
        cost=cost,
        converged=converged,
        iterations=iterations,
    )
