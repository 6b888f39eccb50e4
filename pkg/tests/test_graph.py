import io
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridloc.errors import ConfigurationError, DisconnectedNetworkError
from hybridloc.graph import (Topology, build_snapshot, dump_snapshot, incidence, load_snapshot,
                             max_anchor_count, max_degree)
from hybridloc.scenarios import static_network


def test_collinear_radius_selects_neighbors_only():
    snap = build_snapshot([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], range_radius=1.5)
    assert snap.topology.range_edges == ((0, 1), (1, 2))


def test_far_apart_nodes_are_disconnected():
    with pytest.raises(DisconnectedNetworkError, match="disconnected network"):
        build_snapshot([[0.0, 0.0], [10.0, 0.0]], range_radius=1.0)


def test_bad_inputs():
    with pytest.raises(ConfigurationError):
        build_snapshot([[0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ConfigurationError):
        build_snapshot([[0.0, 0.0], [1.0, 0.0]], range_radius=0.0)
    with pytest.raises(ConfigurationError):
        Topology(2, 2, 0, ((0, 1),), bearing_edges=((0, 2),))


def test_static_network_reaches_target_connectivity():
    for seed in range(5):
        snap = static_network(np.random.default_rng(seed))
        pts = np.vstack([snap.nodes, snap.anchors])
        assert len(pts) == 10
        # count pairs by brute force: node-node plus node-anchor edges, and
        # anchor-anchor pairs within the same radius
        topo = snap.topology
        radius = max(
            [np.linalg.norm(snap.nodes[i] - snap.nodes[j]) for i, j in topo.range_edges]
            + [np.linalg.norm(snap.nodes[i] - snap.anchors[k]) for i, k in topo.anchor_ranges])
        within = sum(np.linalg.norm(a - b) <= radius for a, b in itertools.combinations(pts, 2))
        assert within >= 36
        assert np.all(pts >= 0) and np.all(pts <= np.sqrt(50.0))
        assert max_degree(snap) <= 5


def test_path_graph_incidence():
    snap = build_snapshot([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], range_radius=1.5)
    inc = incidence(snap, 1)
    np.testing.assert_array_equal(inc.C, [[1, -1, 0], [0, 1, -1]])
    assert inc.C_vel.shape[0] == 0


def test_velocity_chain_rows():
    snap = build_snapshot([[0.0, 0.0], [1.0, 0.0]])
    inc = incidence(snap, 3)
    assert inc.C_vel.shape == (4, 6)
    # row for node i at step tau links x_i(tau) and x_i(tau-1)
    expected = np.zeros((4, 6))
    for tau in (1, 2):
        for i in (0, 1):
            expected[(tau - 1) * 2 + i, tau * 2 + i] = 1
            expected[(tau - 1) * 2 + i, (tau - 1) * 2 + i] = -1
    np.testing.assert_array_equal(inc.C_vel, expected)


def test_kronecker_dimensions_and_selector():
    snap = build_snapshot(np.random.default_rng(0).uniform(0, 5, (4, 3)), [[0, 0, 0.0], [1, 1, 1.0]])
    inc = incidence(snap, 2)
    E, n, p = len(snap.topology.range_edges), 4, 3
    assert inc.A.shape == (2 * E * p, 2 * n * p)
    assert np.all(inc.E.sum(axis=1) == 1)
    assert np.all(inc.C.sum(axis=1) == 0)


def test_degree_and_anchor_counts():
    star = build_snapshot([[0.0, 0.0], [1, 0], [-1, 0], [0, 1], [0, -1]], range_radius=1.1)
    assert max_degree(star) == 4
    snap = build_snapshot([[0.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [1.0, 1.0]])
    assert max_anchor_count(snap) == 2


positions = st.integers(2, 6).flatmap(lambda n: st.lists(
    st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=n, max_size=n, unique=True))


@given(positions, st.integers(1, 4), st.integers(0, 2**31))
def test_incidence_properties(pts, window, seed):
    x = np.array(pts)
    if min(np.linalg.norm(a - b) for a, b in itertools.combinations(x, 2)) < 1e-6:
        return
    keep = np.random.default_rng(seed).random(64) < 0.5
    snap = build_snapshot(x, bearing_policy=lambda e: bool(keep[e[0] * 8 + e[1]]))
    topo = snap.topology
    assert set(topo.bearing_edges) <= set(topo.range_edges)
    inc = incidence(snap, window)
    stacked = np.tile(np.ones(2), window * len(x))
    assert np.abs(inc.A @ stacked).max() <= 1e-12
    xs = np.array([x + tau for tau in range(window)])
    diffs = (inc.A @ xs.ravel()).reshape(window, -1, 2)
    for tau in range(window):
        for e, (i, j) in enumerate(topo.range_edges):
            np.testing.assert_array_equal(diffs[tau, e], xs[tau, i] - xs[tau, j])
    np.testing.assert_array_equal(inc.apply_A(xs).ravel(), inc.A @ xs.ravel())
    np.testing.assert_allclose(inc.apply_N(xs).ravel(), inc.N @ xs.ravel(), atol=1e-12)


def test_snapshot_text_round_trip():
    snap = static_network(np.random.default_rng(3))
    buf = io.StringIO()
    dump_snapshot(snap, buf)
    back = load_snapshot(io.StringIO(buf.getvalue()).readlines())
    assert back.topology == snap.topology
    np.testing.assert_array_equal(back.nodes, snap.nodes)
    np.testing.assert_array_equal(back.anchors, snap.anchors)
