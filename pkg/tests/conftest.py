from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from gridcascade.grid_model import Branch, Network, parse_case

CASE9_PATH = Path(__file__).resolve().parent.parent / "src" / "gridcascade" / "cases" / "ieee9.json"

# paper-reported fluctuation schedule on bus 2 (steps 0..2; step 3 free)
PAPER_SCHEDULE = [-1.18, -1.24, 1.46, 0.0]


@pytest.fixture(scope="session")
def case9_text() -> str:
    return CASE9_PATH.read_text()


@pytest.fixture(scope="session")
def case9(case9_text) -> Network:
    return parse_case(case9_text)


@pytest.fixture()
def two_bus() -> Network:
    """Single branch, admittance 2, unit transfer."""
    return Network(
        n_buses=2,
        branches=(Branch(0, 1, 2.0),),
        injections=np.array([1.0, -1.0]),
        thresholds=np.array([1.5]),
        bus_kind=("generator", "load"),
    )


@pytest.fixture()
def triangle() -> Network:
    """Three buses in a cycle with unit admittances."""
    return Network(
        n_buses=3,
        branches=(Branch(0, 1, 1.0), Branch(1, 2, 1.0), Branch(0, 2, 1.0)),
        injections=np.array([1.0, -0.4, -0.6]),
        thresholds=np.array([2.0, 2.0, 2.0]),
        bus_kind=("generator", "load", "load"),
    )
