import numpy as np
import pytest

from gridcascade.dc_powerflow import (
    IslandPartition,
    SingularIslandError,
    find_islands,
    nodal_admittance,
    pseudo_inverse,
    solve_flow,
)
from gridcascade.grid_model import Branch, Network, incidence

from oracles import (
    components_union_find,
    loop_laplacian,
    oracle_flow,
    oracle_pseudo_inverse,
    random_connected_network,
)

# frozen from the dense reduced-solve oracle; cross-checked by hand via the
# single loop equation of the meshed part
CASE9_BASE_FLOWS = [
    0.6699999999999998,
    1.63,
    0.8500000000000003,
    0.38032608695652115,
    0.28967391304347834,
    -0.8696739130434779,
    -0.6103260869565219,
    0.7603260869565205,
    -0.2396739130434779,
]


def test_nodal_admittance_two_bus(two_bus):
    y_b = nodal_admittance(incidence(two_bus), two_bus.base_admittances)
    assert y_b.tolist() == [[2.0, -2.0], [-2.0, 2.0]]


def test_nodal_admittance_symmetry_and_row_sums(case9):
    rng = np.random.default_rng(7)
    y = rng.uniform(0.1, 20.0, case9.n_branches)
    y_b = nodal_admittance(incidence(case9), y)
    assert np.allclose(y_b, y_b.T, atol=0)
    assert np.allclose(y_b.sum(axis=1), 0.0, atol=1e-12)


def test_nodal_admittance_case9_matches_triple_product_oracle(case9):
    y_b = nodal_admittance(incidence(case9), case9.base_admittances)
    assert np.allclose(y_b, loop_laplacian(case9, case9.base_admittances), atol=1e-12)


def test_nodal_admittance_dimension_mismatch(case9):
    with pytest.raises(ValueError):
        nodal_admittance(incidence(case9), np.ones(3))


def test_find_islands_all_live(case9):
    part = find_islands(case9, case9.base_admittances)
    assert part.q == 1
    assert part.islands[0] == tuple(range(9))
    assert part.reference_buses == (0,)


def test_find_islands_all_dead(case9):
    part = find_islands(case9, np.zeros(9))
    assert part.q == 9
    assert all(len(isl) == 1 for isl in part.islands)


def test_find_islands_matches_union_find_oracle(case9):
    rng = np.random.default_rng(11)
    for _ in range(30):
        y = case9.base_admittances * rng.choice([0.0, 1.0], size=9)
        part = find_islands(case9, y)
        assert part.islands == components_union_find(case9, y)


def test_live_classification_uses_relative_threshold(case9):
    y = case9.base_admittances.copy()
    y[0] = 0.009 * case9.base_admittances[0]  # just below the 1% default
    assert find_islands(case9, y).q == 2
    y[0] = 0.011 * case9.base_admittances[0]
    assert find_islands(case9, y).q == 1


def test_pseudo_inverse_two_bus(two_bus):
    y_b = nodal_admittance(incidence(two_bus), two_bus.base_admittances)
    part = find_islands(two_bus, two_bus.base_admittances)
    out = pseudo_inverse(y_b, part)
    assert np.allclose(out, [[0.0, 0.0], [0.0, 0.5]], atol=1e-15)


def test_pseudo_inverse_triangle_matches_reduced_inverse(triangle):
    y_b = nodal_admittance(incidence(triangle), triangle.base_admittances)
    part = find_islands(triangle, triangle.base_admittances)
    out = pseudo_inverse(y_b, part)
    expected = np.zeros((3, 3))
    expected[1:, 1:] = np.linalg.inv(y_b[1:, 1:])
    assert np.allclose(out, expected, atol=1e-12)
    # reference row and column are zero
    assert np.all(out[0, :] == 0.0)
    assert np.all(out[:, 0] == 0.0)


def test_pseudo_inverse_block_composition():
    # two disconnected two-bus islands
    net = Network(
        n_buses=4,
        branches=(Branch(0, 1, 2.0), Branch(2, 3, 4.0)),
        injections=np.zeros(4),
        thresholds=np.ones(2),
        bus_kind=("load",) * 4,
    )
    y_b = nodal_admittance(incidence(net), net.base_admittances)
    part = find_islands(net, net.base_admittances)
    out = pseudo_inverse(y_b, part)
    expected = np.zeros((4, 4))
    expected[1, 1] = 0.5
    expected[3, 3] = 0.25
    assert np.allclose(out, expected, atol=1e-15)
    assert np.allclose(out, oracle_pseudo_inverse(y_b, part.islands), atol=1e-15)


def test_pseudo_inverse_invariant_under_member_order(triangle):
    y_b = nodal_admittance(incidence(triangle), triangle.base_admittances)
    ordered = pseudo_inverse(y_b, IslandPartition(((0, 1, 2),)))
    shuffled = pseudo_inverse(y_b, IslandPartition(((0, 2, 1),)))
    assert np.allclose(ordered, shuffled, atol=1e-12)


def test_pseudo_inverse_singular_block_names_island():
    # bus 2 (index 1) hangs on a dead branch inside a "live" classification:
    # force a singular reduced block by zeroing a bridge admittance but
    # keeping the partition that treats it as one island
    net = Network(
        n_buses=3,
        branches=(Branch(0, 1, 1.0), Branch(1, 2, 1.0)),
        injections=np.zeros(3),
        thresholds=np.ones(2),
        bus_kind=("load",) * 3,
    )
    y = np.array([1.0, 0.0])
    y_b = nodal_admittance(incidence(net), y)
    bad_partition = IslandPartition(((0, 1, 2),))
    with pytest.raises(SingularIslandError, match=r"\[1, 2, 3\]"):
        pseudo_inverse(y_b, bad_partition)


def test_solve_flow_two_bus(two_bus):
    part = find_islands(two_bus, two_bus.base_admittances)
    sol = solve_flow(two_bus, two_bus.base_admittances, two_bus.injections, part)
    assert sol.theta == pytest.approx([0.0, -0.5])
    assert sol.flows == pytest.approx([1.0])


def test_solve_flow_zero_injections(case9):
    part = find_islands(case9, case9.base_admittances)
    sol = solve_flow(case9, case9.base_admittances, np.zeros(9), part)
    assert np.allclose(sol.theta, 0.0, atol=0)
    assert np.allclose(sol.flows, 0.0, atol=0)


def test_solve_flow_case9_base_flows_frozen(case9):
    part = find_islands(case9, case9.base_admittances)
    sol = solve_flow(case9, case9.base_admittances, case9.injections, part)
    assert np.allclose(sol.flows, CASE9_BASE_FLOWS, atol=1e-12)
    # base case operates within every threshold
    assert np.all(np.abs(sol.flows) <= case9.thresholds)


def test_solve_flow_matches_oracle_case9(case9):
    part = find_islands(case9, case9.base_admittances)
    sol = solve_flow(case9, case9.base_admittances, case9.injections, part)
    theta_o, flows_o = oracle_flow(case9, case9.base_admittances, case9.injections)
    assert np.allclose(sol.theta, theta_o, atol=1e-10)
    assert np.allclose(sol.flows, flows_o, atol=1e-10)


def test_reference_bus_angles_are_zero(case9):
    rng = np.random.default_rng(3)
    y = case9.base_admittances * rng.choice([0.0, 1.0], size=9)
    part = find_islands(case9, y)
    sol = solve_flow(case9, y, case9.injections, part)
    for ref in part.reference_buses:
        assert sol.theta[ref] == 0.0


def test_balanced_injection_reconstruction(case9):
    part = find_islands(case9, case9.base_admittances)
    a = incidence(case9)
    y_b = nodal_admittance(a, case9.base_admittances)
    sol = solve_flow(case9, case9.base_admittances, case9.injections, part)
    recon = y_b @ sol.theta
    assert np.allclose(recon, case9.injections, atol=1e-10)


def test_unbalanced_residual_concentrates_at_reference(case9):
    injections = case9.injections.copy()
    injections[4] += 0.37  # unbalance
    part = find_islands(case9, case9.base_admittances)
    a = incidence(case9)
    y_b = nodal_admittance(a, case9.base_admittances)
    sol = solve_flow(case9, case9.base_admittances, injections, part)
    residual = y_b @ sol.theta - injections
    non_ref = [b for b in range(9) if b not in part.reference_buses]
    assert np.allclose(residual[non_ref], 0.0, atol=1e-10)
    assert residual[part.reference_buses[0]] == pytest.approx(-0.37, abs=1e-10)


def test_admittance_scaling_leaves_flows_unchanged(case9):
    part = find_islands(case9, case9.base_admittances)
    base = solve_flow(case9, case9.base_admittances, case9.injections, part)
    alpha = 3.7
    scaled = solve_flow(case9, alpha * case9.base_admittances, case9.injections, part)
    assert np.allclose(scaled.theta, base.theta / alpha, atol=1e-12)
    assert np.allclose(scaled.flows, base.flows, atol=1e-10)


def test_solve_flow_random_networks_match_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(25):
        net = random_connected_network(rng, max_buses=15)
        part = find_islands(net, net.base_admittances)
        sol = solve_flow(net, net.base_admittances, net.injections, part)
        theta_o, flows_o = oracle_flow(net, net.base_admittances, net.injections)
        assert np.allclose(sol.theta, theta_o, atol=1e-9)
        assert np.allclose(sol.flows, flows_o, atol=1e-9)
