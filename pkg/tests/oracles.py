"""Independent reference implementations used as test oracles.

Everything here deliberately avoids the library's code paths: Laplacians are
assembled with explicit loops, connected components use union-find instead of
BFS, angle solves go through per-island dense reduced systems, and the
island-aware pseudo-inverse is the literal selector/bordering-matrix formula.
"""

from __future__ import annotations

import numpy as np

from gridcascade.grid_model import Branch, Network


# ---------------------------------------------------------------------------
# Union-find connected components over live branches
# ---------------------------------------------------------------------------

def components_union_find(net: Network, y_p, live_threshold: float = 0.01):
    """Islands as sorted tuples of bus indices, ordered by lowest member."""
    parent = list(range(net.n_buses))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    y_p = np.asarray(y_p)
    for r, br in enumerate(net.branches):
        if y_p[r] >= live_threshold * br.admittance:
            union(br.from_bus, br.to_bus)

    groups: dict[int, list[int]] = {}
    for b in range(net.n_buses):
        groups.setdefault(find(b), []).append(b)
    return tuple(tuple(sorted(members)) for _, members in sorted(groups.items()))


# ---------------------------------------------------------------------------
# Dense reduced-system DC flow solve
# ---------------------------------------------------------------------------

def loop_laplacian(net: Network, y_p) -> np.ndarray:
    """Nodal admittance matrix built entry by entry."""
    y_p = np.asarray(y_p, dtype=float)
    lap = np.zeros((net.n_buses, net.n_buses))
    for r, br in enumerate(net.branches):
        i, j, y = br.from_bus, br.to_bus, y_p[r]
        lap[i, i] += y
        lap[j, j] += y
        lap[i, j] -= y
        lap[j, i] -= y
    return lap


def oracle_flow(net: Network, y_p, injections, live_threshold: float = 0.01):
    """(theta, flows) via per-island dense reduced solves.

    Reference bus of each island is its lowest index; its angle is zero and
    it absorbs the island's injection imbalance.
    """
    y_p = np.asarray(y_p, dtype=float)
    injections = np.asarray(injections, dtype=float)
    lap = loop_laplacian(net, y_p)
    theta = np.zeros(net.n_buses)
    for island in components_union_find(net, y_p, live_threshold):
        non_ref = list(island[1:])
        if not non_ref:
            continue
        reduced = lap[np.ix_(non_ref, non_ref)]
        theta[non_ref] = np.linalg.solve(reduced, injections[non_ref])
    flows = np.empty(net.n_branches)
    for r, br in enumerate(net.branches):
        flows[r] = y_p[r] * (theta[br.from_bus] - theta[br.to_bus])
    return theta, flows


# ---------------------------------------------------------------------------
# Literal selector-matrix pseudo-inverse (per-island composition)
# ---------------------------------------------------------------------------

def oracle_pseudo_inverse(y_b: np.ndarray, islands) -> np.ndarray:
    """Sum over islands of E_i [0; I] (reduced block)^-1 [0 I] E_i^T."""
    n = y_b.shape[0]
    total = np.zeros((n, n))
    for island in islands:
        k = len(island)
        if k == 1:
            continue
        e_i = np.zeros((n, k))
        for col, bus in enumerate(island):
            e_i[bus, col] = 1.0
        border = np.zeros((k, k - 1))
        border[1:, :] = np.eye(k - 1)
        y_bi = e_i.T @ y_b @ e_i
        reduced = border.T @ y_bi @ border
        total += e_i @ border @ np.linalg.inv(reduced) @ border.T @ e_i.T
    return total


# ---------------------------------------------------------------------------
# Random network generators (deterministic given the rng)
# ---------------------------------------------------------------------------

def random_connected_network(rng: np.random.Generator, max_buses: int = 20) -> Network:
    """Connected network with random admittances and balanced injections."""
    n_buses = int(rng.integers(2, max_buses + 1))
    branches = []
    for b in range(1, n_buses):
        parent = int(rng.integers(0, b))
        branches.append(Branch(parent, b, float(rng.uniform(0.5, 5.0))))
    extra = int(rng.integers(0, n_buses))
    for _ in range(extra):
        i, j = rng.choice(n_buses, size=2, replace=False)
        branches.append(Branch(int(i), int(j), float(rng.uniform(0.5, 5.0))))
    injections = rng.normal(0.0, 1.0, n_buses)
    injections -= injections.mean()
    kinds = tuple("generator" if injections[b] > 0 else "load" for b in range(n_buses))
    return Network(
        n_buses=n_buses,
        branches=tuple(branches),
        injections=injections,
        thresholds=np.full(len(branches), 10.0),
        bus_kind=kinds,
    )


def random_island_network(rng: np.random.Generator, n_islands: int) -> Network:
    """Network made of several disjoint connected blocks."""
    branches = []
    offset = 0
    for idx in range(n_islands):
        size = int(rng.integers(2, 7)) if idx == 0 else int(rng.integers(1, 7))
        for b in range(1, size):
            parent = offset + int(rng.integers(0, b))
            branches.append(Branch(parent, offset + b, float(rng.uniform(0.5, 5.0))))
        if size >= 3 and rng.random() < 0.7:
            i, j = rng.choice(size, size=2, replace=False)
            branches.append(
                Branch(offset + int(i), offset + int(j), float(rng.uniform(0.5, 5.0)))
            )
        offset += size
    n_buses = offset
    injections = rng.normal(0.0, 1.0, n_buses)
    kinds = tuple("load" for _ in range(n_buses))
    return Network(
        n_buses=n_buses,
        branches=tuple(branches),
        injections=injections,
        thresholds=np.full(len(branches), 10.0),
        bus_kind=kinds,
    )
