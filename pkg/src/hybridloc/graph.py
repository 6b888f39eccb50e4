"""Network model: nodes, anchors, measurement edges and incidence operators.

Node ids are ``0..n-1`` and anchor ids ``0..m-1``; the two namespaces are kept
apart by always storing node-anchor pairs as ``(node, anchor)``. Node-node
edges are stored as ``(i, j)`` with ``i < j``. That orientation also fixes the
sign of the arc-node incidence matrix: the lower id gets ``+1``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigurationError, DisconnectedNetworkError

Edge = tuple[int, int]
BearingPolicy = Union[str, Callable[[Edge], bool]]


@dataclass(frozen=True)
class Topology:
    """Measurement structure only (who measures whom), no geometry."""

    dim: int
    n_nodes: int
    n_anchors: int
    range_edges: tuple[Edge, ...]
    bearing_edges: tuple[Edge, ...] = ()
    anchor_ranges: tuple[Edge, ...] = ()
    anchor_bearings: tuple[Edge, ...] = ()

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError(f"dimension must be 2 or 3, got {self.dim}")
        for i, j in self.range_edges:
            if not 0 <= i < j < self.n_nodes:
                raise ConfigurationError(f"bad node edge {(i, j)}")
        for i, k in self.anchor_ranges:
            if not (0 <= i < self.n_nodes and 0 <= k < self.n_anchors):
                raise ConfigurationError(f"bad node-anchor edge {(i, k)}")
        if not set(self.bearing_edges) <= set(self.range_edges):
            raise ConfigurationError("every bearing edge needs a range edge")
        if not set(self.anchor_bearings) <= set(self.anchor_ranges):
            raise ConfigurationError("every anchor bearing needs an anchor range")

    def neighbors(self, i: int) -> list[int]:
        out = [j for a, b in self.range_edges for j in ((b,) if a == i else (a,) if b == i else ())]
        return sorted(out)

    def anchors_of(self, i: int) -> list[int]:
        return [k for node, k in self.anchor_ranges if node == i]

    def degree(self, i: int) -> int:
        return sum(1 for a, b in self.range_edges if i in (a, b))

    def is_connected(self) -> bool:
        n, m = self.n_nodes, self.n_anchors
        rows = [i for i, _ in self.range_edges] + [i for i, _ in self.anchor_ranges]
        cols = [j for _, j in self.range_edges] + [n + k for _, k in self.anchor_ranges]
        # anchors nobody measures are not part of the network
        used = set(range(n)) | {n + k for _, k in self.anchor_ranges}
        if n == 0:
            return False
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n + m, n + m))
        _, labels = connected_components(adj, directed=False)
        return len({labels[v] for v in used}) == 1


@dataclass(frozen=True)
class NetworkSnapshot:
    """Ground-truth geometry plus measurement structure at one tick."""

    topology: Topology
    nodes: np.ndarray
    anchors: np.ndarray
    tick: int = 0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, self.topology.dim)
        anchors = np.asarray(self.anchors, dtype=float).reshape(-1, self.topology.dim)
        nodes.setflags(write=False)
        anchors.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "anchors", anchors)
        if len(nodes) != self.topology.n_nodes or len(anchors) != self.topology.n_anchors:
            raise ConfigurationError("position arrays do not match the topology")

    # convenience pass-throughs
    @property
    def dim(self) -> int:
        return self.topology.dim

    @property
    def range_edges(self):
        return self.topology.range_edges

    @property
    def bearing_edges(self):
        return self.topology.bearing_edges

    @property
    def anchor_ranges(self):
        return self.topology.anchor_ranges

    @property
    def anchor_bearings(self):
        return self.topology.anchor_bearings


def _select_bearings(edges: Sequence[Edge], policy: BearingPolicy) -> tuple[Edge, ...]:
    if policy == "all":
        return tuple(edges)
    if policy == "none":
        return ()
    if callable(policy):
        return tuple(e for e in edges if policy(e))
    raise ConfigurationError(f"unknown bearing policy {policy!r}")


def build_snapshot(
    positions,
    anchors=None,
    range_radius: float = np.inf,
    bearing_policy: BearingPolicy = "all",
    anchor_bearing_policy: BearingPolicy | None = None,
    tick: int = 0,
) -> NetworkSnapshot:
    """Disk-graph snapshot: every pair closer than ``range_radius`` measures a range.

    ``bearing_policy`` is ``"all"``, ``"none"`` or a predicate on an edge; it
    selects which range edges also carry a bearing. Anchor bearings follow
    ``anchor_bearing_policy`` (defaults to the node policy).
    """
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    dim = x.shape[1]
    a = np.zeros((0, dim)) if anchors is None else np.asarray(anchors, dtype=float).reshape(-1, dim)
    if not range_radius > 0:
        raise ConfigurationError("range_radius must be positive")
    n, m = len(x), len(a)
    for i, j in itertools.combinations(range(n), 2):
        if np.array_equal(x[i], x[j]):
            raise ConfigurationError(f"nodes {i} and {j} coincide")

    edges = tuple(
        (i, j) for i, j in itertools.combinations(range(n), 2)
        if np.linalg.norm(x[i] - x[j]) <= range_radius
    )
    aedges = tuple(
        (i, k) for i in range(n) for k in range(m)
        if np.linalg.norm(x[i] - a[k]) <= range_radius
    )
    if anchor_bearing_policy is None:
        anchor_bearing_policy = bearing_policy
    topo = Topology(
        dim=dim,
        n_nodes=n,
        n_anchors=m,
        range_edges=edges,
        bearing_edges=_select_bearings(edges, bearing_policy),
        anchor_ranges=aedges,
        anchor_bearings=_select_bearings(aedges, anchor_bearing_policy),
    )
    if not topo.is_connected():
        raise DisconnectedNetworkError(
            f"disconnected network: {n} nodes, {m} anchors, radius {range_radius}"
        )
    return NetworkSnapshot(topo, x, a, tick)


@dataclass(frozen=True)
class IncidenceStructure:
    """Incidence matrices of one window of ``window`` ticks.

    ``C`` is the arc-node incidence of the node graph, ``C_vel`` links every
    node to itself one tick earlier, ``E`` selects the node of each node-anchor
    edge. The Kronecker-expanded ``A = (I_T (x) C) (x) I_p`` and
    ``N = C_vel (x) I_p`` are applied implicitly by the ``apply_*`` methods on
    arrays shaped ``(T, n, p)``; dense versions exist for checking.
    """

    topology: Topology
    window: int
    C: np.ndarray
    C_vel: np.ndarray
    E: np.ndarray

    @property
    def dim(self):
        return self.topology.dim

    @property
    def A(self) -> np.ndarray:
        return np.kron(np.kron(np.eye(self.window), self.C), np.eye(self.dim))

    @property
    def N(self) -> np.ndarray:
        return np.kron(self.C_vel, np.eye(self.dim))

    @property
    def E_full(self) -> np.ndarray:
        return np.kron(np.kron(np.eye(self.window), self.E), np.eye(self.dim))

    def apply_A(self, x):
        return self.C @ x

    def apply_AT(self, r):
        return self.C.T @ r

    def apply_E(self, x):
        return self.E @ x

    def apply_ET(self, r):
        return self.E.T @ r

    def apply_N(self, x):
        return x[1:] - x[:-1]

    def apply_NT(self, r):
        out = np.zeros((self.window,) + r.shape[1:])
        out[1:] += r
        out[:-1] -= r
        return out


def incidence(snapshot: NetworkSnapshot | Topology, window: int) -> IncidenceStructure:
    topo = snapshot.topology if isinstance(snapshot, NetworkSnapshot) else snapshot
    if window < 1:
        raise ConfigurationError("window must be at least 1")
    n = topo.n_nodes
    C = np.zeros((len(topo.range_edges), n))
    for row, (i, j) in enumerate(topo.range_edges):
        C[row, i] = 1.0
        C[row, j] = -1.0
    C_vel = np.zeros(((window - 1) * n, window * n))
    for tau in range(1, window):
        for i in range(n):
            row = (tau - 1) * n + i
            C_vel[row, tau * n + i] = 1.0
            C_vel[row, (tau - 1) * n + i] = -1.0
    E = np.zeros((len(topo.anchor_ranges), n))
    for row, (i, _) in enumerate(topo.anchor_ranges):
        E[row, i] = 1.0
    for arr in (C, C_vel, E):
        arr.setflags(write=False)
    return IncidenceStructure(topo, window, C, C_vel, E)


def max_degree(snapshot: NetworkSnapshot | Topology) -> int:
    topo = getattr(snapshot, "topology", snapshot)
    if topo.n_nodes == 0:
        return 0
    return max(topo.degree(i) for i in range(topo.n_nodes))


def max_anchor_count(snapshot: NetworkSnapshot | Topology) -> int:
    topo = getattr(snapshot, "topology", snapshot)
    counts = [0] * topo.n_nodes
    for i, _ in topo.anchor_ranges:
        counts[i] += 1
    return max(counts, default=0)


# -- text persistence ---------------------------------------------------------

def dump_snapshot(snapshot: NetworkSnapshot, fh: TextIO) -> None:
    """One record per line: ``dim``, ``tick``, ``node``, ``anchor``, then edges."""
    topo = snapshot.topology
    fh.write(f"dim {topo.dim}\n")
    fh.write(f"tick {snapshot.tick}\n")
    for i, pos in enumerate(snapshot.nodes):
        fh.write("node %d %s\n" % (i, " ".join(repr(float(v)) for v in pos)))
    for k, pos in enumerate(snapshot.anchors):
        fh.write("anchor %d %s\n" % (k, " ".join(repr(float(v)) for v in pos)))
    bset, abset = set(topo.bearing_edges), set(topo.anchor_bearings)
    for e in topo.range_edges:
        fh.write(f"range {e[0]} {e[1]}\n")
        if e in bset:
            fh.write(f"bearing {e[0]} {e[1]}\n")
    for e in topo.anchor_ranges:
        fh.write(f"anchor_range {e[0]} {e[1]}\n")
        if e in abset:
            fh.write(f"anchor_bearing {e[0]} {e[1]}\n")


def load_snapshot(lines: Iterable[str]) -> NetworkSnapshot:
    dim, tick = None, 0
    nodes: dict[int, list[float]] = {}
    anchors: dict[int, list[float]] = {}
    edges: dict[str, list[Edge]] = {k: [] for k in ("range", "bearing", "anchor_range", "anchor_bearing")}
    for raw in lines:
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        kind = parts[0]
        if kind == "dim":
            dim = int(parts[1])
        elif kind == "tick":
            tick = int(parts[1])
        elif kind == "node":
            nodes[int(parts[1])] = [float(v) for v in parts[2:]]
        elif kind == "anchor":
            anchors[int(parts[1])] = [float(v) for v in parts[2:]]
        elif kind in edges:
            edges[kind].append((int(parts[1]), int(parts[2])))
        else:
            raise ConfigurationError(f"unknown snapshot record {kind!r}")
    if dim is None:
        raise ConfigurationError("snapshot file lacks a dim record")
    topo = Topology(
        dim=dim,
        n_nodes=len(nodes),
        n_anchors=len(anchors),
        range_edges=tuple(sorted(edges["range"])),
        bearing_edges=tuple(sorted(edges["bearing"])),
        anchor_ranges=tuple(sorted(edges["anchor_range"])),
        anchor_bearings=tuple(sorted(edges["anchor_bearing"])),
    )
    node_arr = np.array([nodes[i] for i in range(len(nodes))]).reshape(-1, dim)
    anchor_arr = np.array([anchors[k] for k in range(len(anchors))]).reshape(-1, dim)
    return NetworkSnapshot(topo, node_arr, anchor_arr, tick)
