"""DC power flow on possibly-islanded networks.

The nodal admittance matrix of a network with dead branches decomposes into
per-island blocks.  Bus angles are recovered with an island-aware
pseudo-inverse: within each island the reference-bus row and column are
deleted, the reduced block is inverted, and the result is re-embedded with
zeros at the reference positions.  Each island's reference bus therefore has
angle exactly 0 and absorbs any injection imbalance of its island.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .grid_model import Network, incidence

DEFAULT_LIVE_THRESHOLD = 0.01
PIVOT_TOL = 1e-10


class SingularIslandError(RuntimeError):
    """An island's reduced admittance block could not be factorized."""

    def __init__(self, island_buses, detail=""):
        ids = [b + 1 for b in island_buses]
        msg = f"singular reduced admittance block for island with buses {ids}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.island_buses = tuple(island_buses)


@dataclass(frozen=True)
class IslandPartition:
    """Disjoint islands covering all buses; first bus of each is its reference.

    Islands are ordered by their reference (lowest) bus index and each
    island's members are listed in ascending index order.
    """

    islands: tuple[tuple[int, ...], ...]

    @property
    def q(self) -> int:
        return len(self.islands)

    @property
    def reference_buses(self) -> tuple[int, ...]:
        return tuple(isl[0] for isl in self.islands)

    def labels(self, n_buses: int) -> np.ndarray:
        """Island index per bus."""
        lab = np.full(n_buses, -1, dtype=int)
        for i, isl in enumerate(self.islands):
            for b in isl:
                lab[b] = i
        return lab


@dataclass(frozen=True, eq=False)
class FlowSolution:
    """Bus voltage angles (radians) and per-branch flows (p.u.)."""

    theta: np.ndarray
    flows: np.ndarray


def nodal_admittance(a: np.ndarray, y_p: np.ndarray) -> np.ndarray:
    """Nodal admittance matrix from incidence A and branch admittances."""
    y_p = np.asarray(y_p, dtype=float)
    if y_p.shape[0] != a.shape[0]:
        raise ValueError(
            f"admittance vector has length {y_p.shape[0]}, expected {a.shape[0]} branches"
        )
    return a.T @ (y_p[:, None] * a)


def live_branches(net: Network, y_p: np.ndarray, live_threshold: float) -> np.ndarray:
    """Boolean mask: branch r is live iff y_p[r] >= live_threshold * base[r]."""
    return np.asarray(y_p) >= live_threshold * net.base_admittances


def find_islands(
    net: Network, y_p: np.ndarray, live_threshold: float = DEFAULT_LIVE_THRESHOLD
) -> IslandPartition:
    """Connected components over live branches; reference = lowest bus id."""
    if not 0.0 < live_threshold < 1.0:
        raise ValueError(f"live_threshold must be in (0, 1), got {live_threshold}")
    live = live_branches(net, y_p, live_threshold)
    adj: list[list[int]] = [[] for _ in range(net.n_buses)]
    for r, br in enumerate(net.branches):
        if live[r]:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)

    seen = [False] * net.n_buses
    islands: list[tuple[int, ...]] = []
    for start in range(net.n_buses):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        members = [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    members.append(v)
                    stack.append(v)
        islands.append(tuple(sorted(members)))
    return IslandPartition(tuple(islands))


def pseudo_inverse(y_b: np.ndarray, partition: IslandPartition) -> np.ndarray:
    """Island-aware pseudo-inverse of the nodal admittance matrix.

    Sums, over islands, the embedding of the inverse of each island's reduced
    block (reference row/column deleted).  Rows and columns at reference
    buses are zero.  A single-bus island has an empty reduced block and
    contributes nothing.
    """
    n = y_b.shape[0]
    out = np.zeros((n, n))
    for isl in partition.islands:
        if len(isl) == 1:
            continue
        non_ref = list(isl[1:])
        reduced = y_b[np.ix_(non_ref, non_ref)]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LinAlgWarning)
                lu, piv = lu_factor(reduced)
        except Exception as exc:
            raise SingularIslandError(isl, str(exc)) from exc
        pivots = np.abs(np.diag(lu))
        if np.any(pivots < PIVOT_TOL):
            raise SingularIslandError(isl, f"pivot magnitude below {PIVOT_TOL}")
        inv = lu_solve((lu, piv), np.eye(len(non_ref)))
        out[np.ix_(non_ref, non_ref)] = inv
    return out


def solve_flow(
    net: Network,
    y_p: np.ndarray,
    injections: np.ndarray,
    partition: IslandPartition,
) -> FlowSolution:
    """Solve bus angles and branch flows for the given admittance state.

    theta is the pseudo-inverse applied to the injections; flows are
    admittance times the angle difference across each branch.  Any injection
    imbalance within an island is absorbed at its reference bus.
    """
    injections = np.asarray(injections, dtype=float)
    if injections.shape[0] != net.n_buses:
        raise ValueError(
            f"injection vector has length {injections.shape[0]}, expected {net.n_buses}"
        )
    a = incidence(net)
    y_b = nodal_admittance(a, y_p)
    theta = pseudo_inverse(y_b, partition) @ injections
    flows = np.asarray(y_p) * (a @ theta)
    return FlowSolution(theta=theta, flows=flows)
