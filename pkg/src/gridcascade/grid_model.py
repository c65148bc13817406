"""Network data model, JSON case ingestion, and incidence/selection matrices.

Bus ids are 1-based in case files (power-systems convention) and mapped to
0-based indices internally.  Branch ordering everywhere (flows, thresholds,
admittances) is the file order of the `branches` array; that ordering is part
of the external contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

VALID_BUS_KINDS = ("generator", "load")


class CaseError(ValueError):
    """Base class for case-document problems."""


class CaseParseError(CaseError):
    """The case document is not valid JSON or violates the schema."""


class CaseValidationError(CaseError):
    """The case document parsed but describes an invalid network."""


@dataclass(frozen=True)
class Branch:
    """A transmission branch; endpoints are 0-based internal bus indices."""

    from_bus: int
    to_bus: int
    admittance: float


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable grid description.

    Attributes
    ----------
    n_buses, n_branches : sizes of the bus and branch sets.
    branches : per-branch endpoints (0-based) and base admittance (p.u.).
    injections : base injected power per bus, p.u. on `base_mva`.
    thresholds : per-branch flow limit, p.u.; strictly positive.
    bus_kind : "generator" or "load" per bus (reporting metadata only).
    """

    n_buses: int
    branches: tuple[Branch, ...]
    injections: np.ndarray
    thresholds: np.ndarray
    bus_kind: tuple[str, ...]
    base_mva: float = 100.0

    def __post_init__(self):
        inj = np.asarray(self.injections, dtype=float)
        thr = np.asarray(self.thresholds, dtype=float)
        inj.setflags(write=False)
        thr.setflags(write=False)
        object.__setattr__(self, "injections", inj)
        object.__setattr__(self, "thresholds", thr)
        self._validate()

    def _validate(self):
        if self.n_buses < 1:
            raise CaseValidationError("network must have at least one bus")
        if len(self.injections) != self.n_buses:
            raise CaseValidationError(
                f"injections has length {len(self.injections)}, expected {self.n_buses}"
            )
        if len(self.bus_kind) != self.n_buses:
            raise CaseValidationError(
                f"bus_kind has length {len(self.bus_kind)}, expected {self.n_buses}"
            )
        if len(self.thresholds) != len(self.branches):
            raise CaseValidationError(
                f"thresholds has length {len(self.thresholds)}, "
                f"expected {len(self.branches)} (one per branch)"
            )
        for kind in self.bus_kind:
            if kind not in VALID_BUS_KINDS:
                raise CaseValidationError(f"unknown bus kind {kind!r}")
        for r, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if not 0 <= end < self.n_buses:
                    raise CaseValidationError(
                        f"branch {r + 1} references bus {end + 1}, "
                        f"valid ids are 1..{self.n_buses}"
                    )
            if br.from_bus == br.to_bus:
                raise CaseValidationError(f"branch {r + 1} is a self-loop on bus {br.from_bus + 1}")
            if not br.admittance > 0.0:
                raise CaseValidationError(
                    f"branch {r + 1} has non-positive admittance {br.admittance}"
                )
        if not np.all(self.thresholds > 0.0):
            bad = int(np.argmin(self.thresholds))
            raise CaseValidationError(
                f"branch {bad + 1} has non-positive threshold {self.thresholds[bad]}"
            )

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @cached_property
    def base_admittances(self) -> np.ndarray:
        y = np.array([br.admittance for br in self.branches], dtype=float)
        y.setflags(write=False)
        return y

    @cached_property
    def incidence_matrix(self) -> np.ndarray:
        """Cached branch-to-bus incidence matrix (read-only)."""
        a = np.zeros((self.n_branches, self.n_buses))
        for r, br in enumerate(self.branches):
            a[r, br.from_bus] = 1.0
            a[r, br.to_bus] = -1.0
        a.setflags(write=False)
        return a


def _require_keys(obj: dict, allowed: dict[str, bool], where: str) -> None:
    """Check a JSON object against allowed keys; values mark required ones."""
    for key in obj:
        if key not in allowed:
            raise CaseParseError(f"unknown key {key!r} in {where}")
    for key, required in allowed.items():
        if required and key not in obj:
            raise CaseParseError(f"missing key {key!r} in {where}")


def parse_case(case_text: str) -> Network:
    """Parse a JSON case document into a validated Network.

    Schema: top-level keys `buses` (array of {id, kind, injection_pu}),
    `branches` (array of {from, to, admittance_pu, threshold_pu}) and
    optional `base_mva` (default 100).  Unknown keys are rejected.  Bus ids
    must be exactly 1..n_buses.
    """
    try:
        doc = json.loads(case_text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseParseError("case document must be a JSON object")
    _require_keys(doc, {"buses": True, "branches": True, "base_mva": False}, "case document")

    buses = doc["buses"]
    if not isinstance(buses, list) or not buses:
        raise CaseParseError("'buses' must be a non-empty array")
    n_buses = len(buses)
    injections = np.zeros(n_buses)
    kinds: list[str] = [""] * n_buses
    seen_ids: set[int] = set()
    for i, bus in enumerate(buses):
        where = f"buses[{i}]"
        if not isinstance(bus, dict):
            raise CaseParseError(f"{where} must be an object")
        _require_keys(bus, {"id": True, "kind": True, "injection_pu": True}, where)
        bus_id = bus["id"]
        if not isinstance(bus_id, int) or isinstance(bus_id, bool):
            raise CaseParseError(f"{where}: 'id' must be an integer")
        if bus_id in seen_ids:
            raise CaseValidationError(f"duplicate bus id {bus_id}")
        if not 1 <= bus_id <= n_buses:
            raise CaseValidationError(
                f"bus id {bus_id} out of range; ids must be exactly 1..{n_buses}"
            )
        seen_ids.add(bus_id)
        if bus["kind"] not in VALID_BUS_KINDS:
            raise CaseValidationError(f"bus {bus_id} has unknown kind {bus['kind']!r}")
        if not isinstance(bus["injection_pu"], (int, float)) or isinstance(bus["injection_pu"], bool):
            raise CaseParseError(f"{where}: 'injection_pu' must be a number")
        injections[bus_id - 1] = float(bus["injection_pu"])
        kinds[bus_id - 1] = bus["kind"]

    raw_branches = doc["branches"]
    if not isinstance(raw_branches, list) or not raw_branches:
        raise CaseParseError("'branches' must be a non-empty array")
    branches: list[Branch] = []
    thresholds = np.zeros(len(raw_branches))
    for r, br in enumerate(raw_branches):
        where = f"branches[{r}]"
        if not isinstance(br, dict):
            raise CaseParseError(f"{where} must be an object")
        _require_keys(
            br, {"from": True, "to": True, "admittance_pu": True, "threshold_pu": True}, where
        )
        for key in ("from", "to"):
            if not isinstance(br[key], int) or isinstance(br[key], bool):
                raise CaseParseError(f"{where}: {key!r} must be an integer bus id")
        for key in ("admittance_pu", "threshold_pu"):
            if not isinstance(br[key], (int, float)) or isinstance(br[key], bool):
                raise CaseParseError(f"{where}: {key!r} must be a number")
        f, t = br["from"], br["to"]
        for end in (f, t):
            if not 1 <= end <= n_buses:
                raise CaseValidationError(
                    f"branch {r + 1} references bus {end}, valid ids are 1..{n_buses}"
                )
        branches.append(Branch(f - 1, t - 1, float(br["admittance_pu"])))
        thresholds[r] = float(br["threshold_pu"])

    base_mva = float(doc.get("base_mva", 100.0))
    if not base_mva > 0:
        raise CaseValidationError(f"base_mva must be positive, got {base_mva}")

    return Network(
        n_buses=n_buses,
        branches=tuple(branches),
        injections=injections,
        thresholds=thresholds,
        bus_kind=tuple(kinds),
        base_mva=base_mva,
    )


def serialize_case(net: Network) -> str:
    """Serialize a Network back to the JSON case schema (round-trip safe)."""
    doc = {
        "base_mva": net.base_mva,
        "buses": [
            {"id": i + 1, "kind": net.bus_kind[i], "injection_pu": float(net.injections[i])}
            for i in range(net.n_buses)
        ],
        "branches": [
            {
                "from": br.from_bus + 1,
                "to": br.to_bus + 1,
                "admittance_pu": br.admittance,
                "threshold_pu": float(net.thresholds[r]),
            }
            for r, br in enumerate(net.branches)
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def incidence(net: Network) -> np.ndarray:
    """Branch-to-bus incidence matrix: row r has +1 at from(r), -1 at to(r)."""
    return net.incidence_matrix


def selection(net: Network, bus_ids) -> np.ndarray:
    """Diagonal 0/1 bus-selection matrix; `bus_ids` are 1-based ids."""
    lam = np.zeros((net.n_buses, net.n_buses))
    for bus_id in bus_ids:
        if not 1 <= bus_id <= net.n_buses:
            raise CaseValidationError(
                f"selected bus {bus_id} out of range; valid ids are 1..{net.n_buses}"
            )
        lam[bus_id - 1, bus_id - 1] = 1.0
    return lam
