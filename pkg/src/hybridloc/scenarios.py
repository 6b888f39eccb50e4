"""Trajectory generators: lawnmower, lap and helix.

All generators sample positions at constant speed along a piecewise path
and derive velocities from consecutive positions, so
``x(t) - x(t-1) == velocity(t) * dt`` holds for every ``t >= 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DisconnectedNetworkError
from .graph import NetworkSnapshot, build_snapshot


@dataclass
class Scenario:
    name: str
    dim: int
    dt: float
    nodes: np.ndarray       # (T, n, p)
    anchors: np.ndarray     # (T, m, p)
    velocities: np.ndarray  # (T, n, p)
    curved: np.ndarray      # (T,) bool, True on turns / arcs
    range_radius: float = math.inf
    params: dict = field(default_factory=dict)

    @property
    def ticks(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[1]

    def snapshot(self, t: int) -> NetworkSnapshot:
        return build_snapshot(self.nodes[t], self.anchors[t], self.range_radius, tick=t)

    def write_csv(self, fh) -> None:
        """Long-format trajectory dump: ``tick,kind,id,coords...``."""
        fh.write("tick,kind,id," + ",".join("xyz"[: self.dim]) + "\n")
        for t in range(self.ticks):
            for kind, arr in (("node", self.nodes[t]), ("anchor", self.anchors[t])):
                for i, pos in enumerate(arr):
                    fh.write(f"{t},{kind},{i}," + ",".join(repr(float(v)) for v in pos) + "\n")


def _finish(name, dim, dt, nodes, anchors, curved, params) -> Scenario:
    nodes = np.ascontiguousarray(nodes, dtype=float)
    vel = np.zeros_like(nodes)
    vel[1:] = (nodes[1:] - nodes[:-1]) / dt
    vel[0] = vel[1] if len(nodes) > 1 else 0.0
    return Scenario(name, dim, dt, nodes, np.ascontiguousarray(anchors, dtype=float), vel,
                    np.asarray(curved, dtype=bool), params=params)


class _Path:
    """Planar piecewise path of lines and circular arcs, indexed by arc length."""

    def __init__(self, start):
        self.segments = []  # (kind, length, data)
        self.end = np.asarray(start, dtype=float)
        self.heading = 0.0

    def line(self, length):
        if length <= 0:
            return self
        d = np.array([math.cos(self.heading), math.sin(self.heading)])
        self.segments.append(("line", length, (self.end.copy(), d)))
        self.end = self.end + length * d
        return self

    def turn(self, radius, angle):
        """Arc turning left for ``angle > 0``; ``radius == 0`` is a point turn."""
        if radius == 0:
            self.heading += angle
            return self
        sign = 1.0 if angle > 0 else -1.0
        center = self.end + sign * radius * np.array([-math.sin(self.heading), math.cos(self.heading)])
        a0 = self.heading - sign * math.pi / 2
        self.segments.append(("arc", radius * abs(angle), (center, radius, a0, sign)))
        self.heading += angle
        self.end = center + radius * np.array([math.cos(a0 + angle), math.sin(a0 + angle)])
        return self

    @property
    def length(self):
        return sum(seg[1] for seg in self.segments)

    def evaluate(self, s):
        """Positions and a curved flag at arc lengths ``s`` (clamped extrapolation at ends)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        pts = np.zeros((len(s), 2))
        curved = np.zeros(len(s), dtype=bool)
        bounds = np.cumsum([0.0] + [seg[1] for seg in self.segments])
        for idx, si in enumerate(s):
            k = int(np.searchsorted(bounds, si, side="right") - 1)
            k = min(max(k, 0), len(self.segments) - 1)
            kind, length, data = self.segments[k]
            local = si - bounds[k]
            if kind == "line":
                origin, d = data
                pts[idx] = origin + local * d
            else:
                center, radius, a0, sign = data
                if 0 <= local <= length:
                    ang = a0 + sign * local / radius
                    pts[idx] = center + radius * np.array([math.cos(ang), math.sin(ang)])
                    curved[idx] = True
                else:
                    # extrapolate along the tangent beyond the path ends
                    edge = min(max(local, 0.0), length)
                    ang = a0 + sign * edge / radius
                    base = center + radius * np.array([math.cos(ang), math.sin(ang)])
                    tangent = sign * np.array([-math.sin(ang), math.cos(ang)])
                    pts[idx] = base + (local - edge) * tangent
        return pts, curved


def lawnmower(
    leg_length: float = 40.0,
    spacing: float = 12.0,
    legs: int = 4,
    turn_radius: float | None = None,
    speed: float = 1.0,
    dt: float = 1.0,
    node_offset: float = 4.0,
    anchor_lags: tuple = (4.0, 10.0),
) -> Scenario:
    """Two nodes at +/- ``node_offset`` (y) around a lawnmower path followed by two anchors.

    A turn is a quarter arc, a straight run across, and a quarter arc; with
    ``turn_radius=0`` the legs and cross runs are axis aligned.
    """
    if turn_radius is None:
        turn_radius = spacing / 2
    if min(leg_length, spacing, speed, dt) <= 0 or legs < 1 or turn_radius < 0 or 2 * turn_radius > spacing:
        raise ConfigurationError("lawnmower geometry must be positive with 2*turn_radius <= spacing")
    path = _Path((0.0, 0.0))
    for leg in range(legs):
        path.line(leg_length)
        if leg == legs - 1:
            break
        side = 1.0 if leg % 2 == 0 else -1.0
        path.turn(turn_radius, side * math.pi / 2)
        path.line(spacing - 2 * turn_radius)
        path.turn(turn_radius, side * math.pi / 2)
    lead = max(anchor_lags)
    ticks = int(math.floor(path.length / (speed * dt))) + 1
    s = lead + np.arange(ticks) * speed * dt
    s = s[s <= path.length + 1e-9]
    base, curved = path.evaluate(s)
    off = np.array([0.0, node_offset])
    nodes = np.stack([base + off, base - off], axis=1)
    anchors = np.stack([path.evaluate(s - lag)[0] for lag in anchor_lags], axis=1)
    if turn_radius == 0:
        # cross runs count as turns
        heading = np.diff(base, axis=0, prepend=base[:1] - [speed * dt, 0.0])
        curved = np.abs(heading[:, 1]) > 1e-12
    return _finish("lawnmower", 2, dt, nodes, anchors, curved,
                   dict(leg_length=leg_length, spacing=spacing, legs=legs, turn_radius=turn_radius,
                        speed=speed, dt=dt, node_offset=node_offset, anchor_lags=list(anchor_lags)))


def lap(
    straight_length: float = 40.0,
    radius: float = 12.0,
    laps: int = 1,
    speed: float = 1.0,
    dt: float = 1.0,
    node_offset: float = 4.0,
    anchor_lags: tuple = (5.0, 12.0),
    anchor_offset: float = 1.5,
) -> Scenario:
    """Closed stadium loop; node 0 runs outside (offset outward), node 1 inside.

    Anchors follow the centre line ``anchor_lags`` meters behind, nudged
    ``+/- anchor_offset`` along the normal so they are not collinear with the path.
    """
    if min(straight_length, radius, speed, dt) <= 0 or laps < 1 or not 0 <= node_offset < radius:
        raise ConfigurationError("lap geometry must be positive with node_offset < radius")
    path = _Path((0.0, -radius))
    for _ in range(laps):
        path.line(straight_length).turn(radius, math.pi).line(straight_length).turn(radius, math.pi)
    lead = max(anchor_lags)
    # one extra leading straight so the lagged anchors start on the loop
    s = lead + np.arange(int(math.floor((path.length - lead) / (speed * dt))) + 1) * speed * dt

    def offset_track(arc, off):
        pts, cur = path.evaluate(arc)
        ahead, _ = path.evaluate(arc + 1e-6)
        behind, _ = path.evaluate(arc - 1e-6)
        t = ahead - behind
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        outward = np.stack([t[:, 1], -t[:, 0]], axis=1)  # right of a counter-clockwise loop
        return pts + off * outward, cur

    outer, curved = offset_track(s, node_offset)
    inner, _ = offset_track(s, -node_offset)
    nodes = np.stack([outer, inner], axis=1)
    anchors = np.stack(
        [offset_track(s - lag, anchor_offset * (1 if k % 2 == 0 else -1))[0]
         for k, lag in enumerate(anchor_lags)], axis=1)
    return _finish("lap", 2, dt, nodes, anchors, curved,
                   dict(straight_length=straight_length, radius=radius, laps=laps, speed=speed, dt=dt,
                        node_offset=node_offset, anchor_lags=list(anchor_lags),
                        anchor_offset=anchor_offset))


def helix(
    radius: float = 15.0,
    turns: float = 2.5,
    speed: float = 1.0,
    descent: float = 0.1,
    z0: float = 30.0,
    dt: float = 1.0,
    node_offset: float = 4.0,
    anchor_phases: tuple = (-0.35, -0.7, -1.05),
    anchor_heights: tuple = (3.0, 0.0, -3.0),
) -> Scenario:
    """3D helix: constant angular rate in xy, depth decreasing ``descent`` m per tick.

    Nodes circle at ``radius +/- node_offset``; the three anchors share the
    centre radius, trail by ``anchor_phases`` radians and sit at fixed
    height offsets so they never become coplanar with the nodes.
    """
    if min(radius, turns, speed, descent, dt) <= 0 or not 0 <= node_offset < radius:
        raise ConfigurationError("helix geometry must be positive with node_offset < radius")
    if len(anchor_phases) != len(anchor_heights):
        raise ConfigurationError("one height per anchor phase")
    omega = speed / radius
    ticks = int(math.floor(turns * 2 * math.pi / (omega * dt))) + 1
    t = np.arange(ticks) * dt
    ang = omega * t
    z = z0 - descent * t / dt

    def ring(r, phase, dz):
        return np.stack([r * np.cos(ang + phase), r * np.sin(ang + phase), z + dz], axis=1)

    nodes = np.stack([ring(radius + node_offset, 0.0, 0.0), ring(radius - node_offset, 0.0, 0.0)], axis=1)
    anchors = np.stack([ring(radius, ph, h) for ph, h in zip(anchor_phases, anchor_heights)], axis=1)
    return _finish("helix", 3, dt, nodes, anchors, np.ones(ticks, dtype=bool),
                   dict(radius=radius, turns=turns, speed=speed, descent=descent, z0=z0, dt=dt,
                        node_offset=node_offset, anchor_phases=list(anchor_phases),
                        anchor_heights=list(anchor_heights)))


def static_network(
    rng: np.random.Generator,
    n_points: int = 10,
    area: float = 50.0,
    n_anchors: int = 4,
    connectivity: float = 0.8,
    min_separation: float = 0.5,
    max_attempts: int = 1000,
) -> NetworkSnapshot:
    """Random planar network: ``n_points`` in a square of ``area`` m^2, ``n_anchors`` of them anchors.

    The range radius is the smallest one that links at least a fraction
    ``connectivity`` of all point pairs. Draws that put two points closer than
    ``min_separation`` or leave the graph disconnected are redrawn.
    """
    if not (0 < n_anchors < n_points and area > 0 and 0 < connectivity <= 1 and min_separation >= 0):
        raise ConfigurationError("static network needs 0 < n_anchors < n_points, area > 0, 0 < connectivity <= 1")
    side = math.sqrt(area)
    n_pairs = n_points * (n_points - 1) // 2
    need = int(math.ceil(connectivity * n_pairs))
    for _ in range(max_attempts):
        pts = rng.uniform(0.0, side, size=(n_points, 2))
        anchor_idx = np.sort(rng.choice(n_points, size=n_anchors, replace=False))
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))[np.triu_indices(n_points, 1)]
        if dist.min() < min_separation:
            continue
        radius = float(np.sort(dist)[need - 1])
        node_idx = np.setdiff1d(np.arange(n_points), anchor_idx)
        try:
            return build_snapshot(pts[node_idx], pts[anchor_idx], range_radius=radius)
        except DisconnectedNetworkError:
            continue
    raise ConfigurationError("could not draw a connected static network")


GENERATORS = {"lawnmower": lawnmower, "lap": lap, "helix": helix}


def make_scenario(name: str, **params) -> Scenario:
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ConfigurationError(f"unknown scenario {name!r}") from None
    for key in ("anchor_lags", "anchor_phases", "anchor_heights"):
        if key in params:
            params[key] = tuple(params[key])
    return gen(**params)
