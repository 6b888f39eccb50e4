"""Noisy range / bearing / velocity measurements.

Ranges carry zero-mean Gaussian noise, bearings and headings are drawn from a
von Mises-Fisher distribution around the true direction. A node-node bearing
``u_ij`` (``i < j``) points along ``x_i - x_j``; a node-anchor bearing ``q_ik``
along ``x_i - a_k``; a heading ``v_i(t)`` along ``x_i(t) - x_i(t-1)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, TextIO

import numpy as np

from .errors import ConfigurationError
from .graph import Edge, NetworkSnapshot, Topology


@dataclass
class NoiseParams:
    """Noise levels, one default per measurement kind plus per-edge overrides.

    ``speed_std`` is the STD of the distance travelled in one tick (meters),
    i.e. a speed STD in m/s times the tick duration.
    """

    range_std: Optional[float] = 0.5
    anchor_range_std: Optional[float] = 0.5
    bearing_kappa: Optional[float] = 1000.0
    anchor_bearing_kappa: Optional[float] = 1000.0
    speed_std: Optional[float] = 0.1
    heading_kappa: Optional[float] = 1000.0
    edge_range_std: dict = field(default_factory=dict)
    edge_anchor_range_std: dict = field(default_factory=dict)
    edge_bearing_kappa: dict = field(default_factory=dict)
    edge_anchor_bearing_kappa: dict = field(default_factory=dict)
    node_speed_std: dict = field(default_factory=dict)
    node_heading_kappa: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("range_std", "anchor_range_std", "bearing_kappa",
                     "anchor_bearing_kappa", "speed_std", "heading_kappa"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be positive and finite, got {v}")
        for table in (self.edge_range_std, self.edge_anchor_range_std, self.edge_bearing_kappa,
                      self.edge_anchor_bearing_kappa, self.node_speed_std, self.node_heading_kappa):
            for key, v in table.items():
                if not (math.isfinite(v) and v > 0):
                    raise ConfigurationError(f"parameter for {key} must be positive, got {v}")

    @staticmethod
    def _lookup(table, key, default, what):
        if key in table:
            return table[key]
        if default is None:
            raise ConfigurationError(f"no {what} parameter for {key}")
        return default

    def sigma(self, i, j):
        return self._lookup(self.edge_range_std, (i, j), self.range_std, "range std")

    def varsigma(self, i, k):
        return self._lookup(self.edge_anchor_range_std, (i, k), self.anchor_range_std, "anchor range std")

    def kappa(self, i, j):
        return self._lookup(self.edge_bearing_kappa, (i, j), self.bearing_kappa, "bearing kappa")

    def lam(self, i, k):
        return self._lookup(self.edge_anchor_bearing_kappa, (i, k), self.anchor_bearing_kappa,
                            "anchor bearing kappa")

    def sigma_v(self, i):
        return self._lookup(self.node_speed_std, i, self.speed_std, "speed std")

    def kappa_v(self, i):
        return self._lookup(self.node_heading_kappa, i, self.heading_kappa, "heading kappa")

    def check_covers(self, topo: Topology) -> None:
        for i, j in topo.range_edges:
            self.sigma(i, j)
        for i, j in topo.bearing_edges:
            self.kappa(i, j)
        for i, k in topo.anchor_ranges:
            self.varsigma(i, k)
        for i, k in topo.anchor_bearings:
            self.lam(i, k)
        for i in range(topo.n_nodes):
            self.sigma_v(i)
            self.kappa_v(i)


@dataclass
class Dataset:
    """All measurements taken at one tick, plus the known anchor positions."""

    dim: int
    n_nodes: int
    tick: int
    dt: float
    anchors: np.ndarray
    ranges: dict = field(default_factory=dict)
    anchor_ranges: dict = field(default_factory=dict)
    bearings: dict = field(default_factory=dict)
    anchor_bearings: dict = field(default_factory=dict)
    speeds: Optional[np.ndarray] = None
    headings: Optional[np.ndarray] = None
    corrupted: frozenset = frozenset()

    def topology(self) -> Topology:
        return Topology(
            dim=self.dim,
            n_nodes=self.n_nodes,
            n_anchors=len(self.anchors),
            range_edges=tuple(sorted(self.ranges)),
            bearing_edges=tuple(sorted(self.bearings)),
            anchor_ranges=tuple(sorted(self.anchor_ranges)),
            anchor_bearings=tuple(sorted(self.anchor_bearings)),
        )

    @property
    def velocities(self):
        if self.speeds is None:
            return None
        return self.speeds[:, None] * self.headings

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)

        def same_dict(a, b):
            return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)

        return (
            self.dim == other.dim and self.n_nodes == other.n_nodes and self.tick == other.tick
            and self.dt == other.dt and np.array_equal(self.anchors, other.anchors)
            and same_dict(self.ranges, other.ranges)
            and same_dict(self.anchor_ranges, other.anchor_ranges)
            and same_dict(self.bearings, other.bearings)
            and same_dict(self.anchor_bearings, other.anchor_bearings)
            and same(self.speeds, other.speeds) and same(self.headings, other.headings)
            and self.corrupted == other.corrupted
        )


def kappa_to_sigma_eq(kappa: float) -> float:
    """Angular STD (radians) equivalent to a concentration ``kappa``."""
    kappa = float(kappa)
    if not kappa > 0:
        raise ValueError(f"domain error: kappa must be positive, got {kappa}")
    deficit = 1.0 / (2 * kappa) + 1.0 / (8 * kappa**2) + 1.0 / (8 * kappa**3)
    if deficit >= 1.0:
        raise ValueError(f"domain error: kappa={kappa} too small for the approximation")
    return math.sqrt(-2.0 * math.log1p(-deficit))


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _tangent_basis(mean):
    # two unit vectors orthogonal to mean (p=3)
    helper = np.eye(3)[np.argmin(np.abs(mean))]
    e1 = np.cross(mean, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(mean, e1)
    return e1, e2


def sample_vmf(mean, kappa: float, rng: np.random.Generator, size: Optional[int] = None):
    """Draw unit vectors from vMF(mean, kappa) for p = 2 or 3.

    p=2 rotates ``mean`` by a von Mises angle. p=3 samples the cosine ``w`` of
    the polar angle by inverting its CDF,
    ``w = 1 + log(u + (1-u) exp(-2 kappa)) / kappa``, then picks a uniform
    azimuth.
    """
    mu = np.asarray(mean, dtype=float)
    p = mu.shape[0]
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    n = 1 if size is None else int(size)
    if p == 2:
        theta = rng.vonmises(0.0, kappa, size=n)
        phi = math.atan2(mu[1], mu[0]) + theta
        out = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    elif p == 3:
        u = 1.0 - rng.random(n)  # (0, 1]
        if kappa == 0:
            w = 2.0 * u - 1.0
        else:
            w = 1.0 + np.log(u + (1.0 - u) * math.exp(-2.0 * kappa)) / kappa
        w = np.clip(w, -1.0, 1.0)
        az = rng.uniform(0.0, 2.0 * math.pi, size=n)
        e1, e2 = _tangent_basis(mu / np.linalg.norm(mu))
        radial = np.sqrt(np.maximum(0.0, 1.0 - w * w))
        out = (w[:, None] * mu + radial[:, None] * (np.cos(az)[:, None] * e1 + np.sin(az)[:, None] * e2))
    else:
        raise ValueError(f"only p=2 and p=3 are supported, got {p}")
    out = _unit(out)
    return out[0] if size is None else out


def mean_resultant_length(kappa: float, p: int) -> float:
    """Expected norm of the mean of vMF(kappa) draws, ``I_{p/2}/I_{p/2-1}``."""
    from scipy.special import ive

    if kappa == 0:
        return 0.0
    return float(ive(p / 2, kappa) / ive(p / 2 - 1, kappa))


def synthesize_dataset(
    snapshot: NetworkSnapshot,
    true_velocities,
    params: NoiseParams,
    dt: float,
    rng: np.random.Generator,
) -> Dataset:
    """Noisy measurements for every edge of ``snapshot``.

    Negative noisy ranges and travelled distances are clamped at zero.
    """
    topo = snapshot.topology
    params.check_covers(topo)
    x, a = snapshot.nodes, snapshot.anchors
    ranges, aranges, bearings, abearings = {}, {}, {}, {}
    bset, abset = set(topo.bearing_edges), set(topo.anchor_bearings)
    for i, j in topo.range_edges:
        diff = x[i] - x[j]
        ranges[(i, j)] = max(0.0, float(np.linalg.norm(diff) + rng.normal(0.0, params.sigma(i, j))))
        if (i, j) in bset:
            bearings[(i, j)] = sample_vmf(_unit(diff), params.kappa(i, j), rng)
    for i, k in topo.anchor_ranges:
        diff = x[i] - a[k]
        aranges[(i, k)] = max(0.0, float(np.linalg.norm(diff) + rng.normal(0.0, params.varsigma(i, k))))
        if (i, k) in abset:
            abearings[(i, k)] = sample_vmf(_unit(diff), params.lam(i, k), rng)

    speeds = headings = None
    if true_velocities is not None:
        beta = np.asarray(true_velocities, dtype=float).reshape(topo.n_nodes, topo.dim)
        speeds = np.empty(topo.n_nodes)
        headings = np.empty((topo.n_nodes, topo.dim))
        for i in range(topo.n_nodes):
            step = float(np.linalg.norm(beta[i])) * dt
            speeds[i] = max(0.0, step + rng.normal(0.0, params.sigma_v(i))) / dt
            if step > 0:
                headings[i] = sample_vmf(beta[i] / np.linalg.norm(beta[i]), params.kappa_v(i), rng)
            else:
                mean = np.zeros(topo.dim)
                mean[0] = 1.0
                headings[i] = sample_vmf(mean, 0.0, rng)

    return Dataset(
        dim=topo.dim,
        n_nodes=topo.n_nodes,
        tick=snapshot.tick,
        dt=float(dt),
        anchors=np.array(a),
        ranges=ranges,
        anchor_ranges=aranges,
        bearings=bearings,
        anchor_bearings=abearings,
        speeds=speeds,
        headings=headings,
    )


def inject_outliers(
    dataset: Dataset,
    snapshot: NetworkSnapshot,
    edges: Iterable[tuple[str, Edge]],
    magnitude_factor: float,
    probability: float,
    rng: np.random.Generator,
) -> Dataset:
    """Replace selected ranges by ``magnitude_factor`` times the true distance.

    ``edges`` holds ``("node", (i, j))`` or ``("anchor", (i, k))`` entries.
    Each selected range is corrupted independently with ``probability``; one
    uniform draw is consumed per selected edge, in the given order.
    """
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability must be in [0, 1]")
    if not magnitude_factor > 0:
        raise ValueError("magnitude_factor must be positive")
    ranges = dict(dataset.ranges)
    aranges = dict(dataset.anchor_ranges)
    hit = set(dataset.corrupted)
    for kind, (i, j) in edges:
        draw = rng.random()
        if kind == "node":
            table, other = ranges, snapshot.nodes[j]
        elif kind == "anchor":
            table, other = aranges, snapshot.anchors[j]
        else:
            raise ConfigurationError(f"unknown edge kind {kind!r}")
        if (i, j) not in table:
            raise ConfigurationError(f"{kind} edge {(i, j)} has no range measurement")
        if draw < probability:
            table[(i, j)] = magnitude_factor * float(np.linalg.norm(snapshot.nodes[i] - other))
            hit.add((kind, (i, j)))
    return replace(dataset, ranges=ranges, anchor_ranges=aranges, corrupted=frozenset(hit))


# -- delimited text persistence ---------------------------------------------

def write_datasets(datasets: Iterable[Dataset], fh: TextIO) -> None:
    """CSV rows ``kind,tick,id1,id2,values...``; one measurement per row."""
    w = csv.writer(fh, lineterminator="\n")
    r = lambda v: repr(float(v))  # noqa: E731
    for ds in datasets:
        w.writerow(["meta", ds.tick, ds.dim, ds.n_nodes, r(ds.dt)])
        for k, pos in enumerate(ds.anchors):
            w.writerow(["anchor", ds.tick, k, "", *map(r, pos)])
        for (i, j), v in sorted(ds.ranges.items()):
            w.writerow(["range", ds.tick, i, j, r(v)])
        for (i, k), v in sorted(ds.anchor_ranges.items()):
            w.writerow(["anchor_range", ds.tick, i, k, r(v)])
        for (i, j), v in sorted(ds.bearings.items()):
            w.writerow(["bearing", ds.tick, i, j, *map(r, v)])
        for (i, k), v in sorted(ds.anchor_bearings.items()):
            w.writerow(["anchor_bearing", ds.tick, i, k, *map(r, v)])
        if ds.speeds is not None:
            for i in range(ds.n_nodes):
                w.writerow(["velocity", ds.tick, i, "", r(ds.speeds[i]), *map(r, ds.headings[i])])
        for kind, (i, j) in sorted(ds.corrupted):
            w.writerow(["outlier", ds.tick, i, j, kind])


def read_datasets(fh: TextIO) -> list[Dataset]:
    out: list[Dataset] = []
    cur: dict = {}

    def flush():
        if not cur:
            return
        n = cur["n_nodes"]
        speeds = headings = None
        if cur["vel"]:
            speeds = np.array([cur["vel"][i][0] for i in range(n)])
            headings = np.array([cur["vel"][i][1] for i in range(n)])
        anchors = np.array([cur["anchors"][k] for k in sorted(cur["anchors"])]).reshape(-1, cur["dim"])
        out.append(Dataset(
            dim=cur["dim"], n_nodes=n, tick=cur["tick"], dt=cur["dt"], anchors=anchors,
            ranges=cur["ranges"], anchor_ranges=cur["aranges"], bearings=cur["bearings"],
            anchor_bearings=cur["abearings"], speeds=speeds, headings=headings,
            corrupted=frozenset(cur["outliers"]),
        ))

    for row in csv.reader(fh):
        if not row or row[0].startswith("#"):
            continue
        kind, tick = row[0], int(row[1])
        if kind == "meta":
            flush()
            cur = dict(tick=tick, dim=int(row[2]), n_nodes=int(row[3]), dt=float(row[4]),
                       anchors={}, ranges={}, aranges={}, bearings={}, abearings={}, vel={},
                       outliers=set())
            continue
        if not cur or tick != cur["tick"]:
            raise ConfigurationError(f"record for tick {tick} outside its meta block")
        vals = [float(v) for v in row[4:]] if kind != "outlier" else row[4:]
        if kind == "anchor":
            cur["anchors"][int(row[2])] = vals
        elif kind == "range":
            cur["ranges"][(int(row[2]), int(row[3]))] = vals[0]
        elif kind == "anchor_range":
            cur["aranges"][(int(row[2]), int(row[3]))] = vals[0]
        elif kind == "bearing":
            cur["bearings"][(int(row[2]), int(row[3]))] = np.array(vals)
        elif kind == "anchor_bearing":
            cur["abearings"][(int(row[2]), int(row[3]))] = np.array(vals)
        elif kind == "velocity":
            cur["vel"][int(row[2])] = (vals[0], vals[1:])
        elif kind == "outlier":
            cur["outliers"].add((vals[0], (int(row[2]), int(row[3]))))
        else:
            raise ConfigurationError(f"unknown measurement kind {kind!r}")
    flush()
    return out
