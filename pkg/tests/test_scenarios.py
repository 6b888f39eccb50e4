import io

import numpy as np
import pytest

from hybridloc.errors import ConfigurationError
from hybridloc.scenarios import helix, lap, lawnmower, make_scenario


@pytest.mark.parametrize("name", ["lawnmower", "lap", "helix"])
def test_velocity_consistency_is_exact(name):
    sc = make_scenario(name)
    np.testing.assert_array_equal(sc.nodes[1:] - sc.nodes[:-1], sc.velocities[1:] * sc.dt)


def test_velocity_consistency_with_binary_tick():
    sc = lawnmower(dt=0.5)
    np.testing.assert_array_equal(sc.nodes[1:] - sc.nodes[:-1], sc.velocities[1:] * sc.dt)


@pytest.mark.parametrize("name", ["lawnmower", "lap", "helix"])
def test_shapes_and_determinism(name):
    a, b = make_scenario(name), make_scenario(name)
    np.testing.assert_array_equal(a.nodes, b.nodes)
    np.testing.assert_array_equal(a.anchors, b.anchors)
    n_anchors = {"lawnmower": 2, "lap": 2, "helix": 3}[name]
    assert a.nodes.shape[1:] == (2, a.dim) and a.anchors.shape[1] == n_anchors
    assert a.curved.shape == (a.ticks,)
    for t in range(0, a.ticks, 7):
        a.snapshot(t)  # connected at every tick


def test_square_lawnmower_legs():
    sc = lawnmower(turn_radius=0.0, legs=3)
    v = sc.velocities[:, 0]
    # every step is along one axis
    assert np.all(np.isclose(v[:, 0], 0) | np.isclose(v[:, 1], 0))
    legs = v[~sc.curved, 0]
    signs = np.sign(legs[np.abs(legs) > 0.5])
    flips = np.flatnonzero(np.diff(signs))
    assert len(flips) == 2
    assert signs[0] == 1 and signs[-1] == 1 and -1 in signs


def test_lawnmower_has_turns_and_straights():
    sc = lawnmower()
    assert sc.curved.any() and (~sc.curved).any()
    speed = np.linalg.norm(sc.velocities[1:, 0] - 0, axis=1)
    assert speed.max() < 1.6


def test_lap_is_closed_loop():
    sc = lap(laps=1)
    centre = sc.nodes.mean(axis=1)
    assert np.linalg.norm(centre[-1] - centre[0]) < 2 * 1.0 + 12.0  # back near the start
    assert sc.curved.sum() > 0.3 * sc.ticks


def test_helix_descends_at_constant_planar_speed():
    sc = helix()
    z = sc.nodes[:, :, 2]
    assert np.all(np.diff(z, axis=0) < 0)
    planar = np.linalg.norm(np.diff(sc.nodes[:, 0, :2], axis=0), axis=1)
    np.testing.assert_allclose(planar, planar[0], rtol=1e-9)
    assert sc.dim == 3


def test_bad_geometry_is_rejected():
    for gen, kwargs in ((lawnmower, dict(leg_length=-1.0)), (lawnmower, dict(turn_radius=7.0, spacing=12.0)),
                        (lap, dict(radius=0.0)), (helix, dict(descent=0.0)), (helix, dict(node_offset=20.0))):
        with pytest.raises(ConfigurationError):
            gen(**kwargs)
    with pytest.raises(ConfigurationError):
        make_scenario("spiral")


def test_trajectory_dump():
    sc = lap()
    buf = io.StringIO()
    sc.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "tick,kind,id,x,y"
    assert len(lines) == 1 + sc.ticks * 4
    t, kind, i, x, y = lines[1].split(",")
    assert (t, kind, i) == ("0", "node", "0") and float(x) == sc.nodes[0, 0, 0]
