"""Window cost functions and the quadratic form ``1/2 z'Mz - b'z`` over ``z = (x, y, w, s)``.

A window holds ``T`` consecutive ticks. Inside it the stacked variable is laid
out time-major then id-major:

* ``x``: ``(T, n, p)`` node positions
* ``y``: ``(T, E, p)`` one vector per node-node range edge (``x_i - x_j``)
* ``w``: ``(T, K, p)`` one vector per node-anchor range edge (``x_i - a_k``)
* ``s``: ``(T-1, n, p)`` one vector per node and tick ``tau >= 1``
  (``x_i(tau) - x_i(tau-1)``)

The edge set of the newest tick is used for the whole window.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError, DegenerateMeasurementError
from .graph import IncidenceStructure, Topology, incidence
from .measurement import Dataset, NoiseParams


@dataclass(frozen=True)
class Layout:
    window: int
    n_nodes: int
    n_edges: int
    n_anchor_edges: int
    dim: int

    @cached_property
    def shapes(self):
        T, n, E, K, p = self.window, self.n_nodes, self.n_edges, self.n_anchor_edges, self.dim
        return (T, n, p), (T, E, p), (T, K, p), (T - 1, n, p)

    @cached_property
    def sizes(self):
        return tuple(int(np.prod(s)) for s in self.shapes)

    @cached_property
    def size(self) -> int:
        return sum(self.sizes)

    @cached_property
    def _slices(self):
        bounds = np.cumsum((0,) + self.sizes)
        return tuple(zip(bounds[:-1].tolist(), bounds[1:].tolist(), self.shapes))

    def split(self, z):
        """Views of ``z`` as ``(x, y, w, s)``."""
        return tuple(z[a:b].reshape(shape) for a, b, shape in self._slices)

    def join(self, x, y, w, s):
        return np.concatenate([np.ravel(x), np.ravel(y), np.ravel(w), np.ravel(s)])

    def zeros(self):
        return np.zeros(self.size)


@dataclass
class WindowData:
    """Measurements of ``window`` consecutive ticks as dense arrays."""

    topology: Topology
    layout: Layout
    dt: float
    edges: np.ndarray          # (E, 2)
    anchor_edges: np.ndarray   # (K, 2) node, anchor
    d: np.ndarray              # (T, E)
    r: np.ndarray              # (T, K)
    u: np.ndarray              # (T, E, p), zero where no bearing
    u_mask: np.ndarray         # (E,)
    q: np.ndarray              # (T, K, p)
    q_mask: np.ndarray         # (K,)
    alpha: np.ndarray          # (T, K, p) anchor position of each node-anchor edge
    step: np.ndarray           # (T, n) measured distance travelled V*dt
    heading: np.ndarray        # (T, n, p)
    ticks: tuple = ()

    @classmethod
    def from_datasets(cls, datasets: Sequence[Dataset]) -> "WindowData":
        if not datasets:
            raise ConfigurationError("a window needs at least one dataset")
        topo = datasets[-1].topology()
        T, p, n = len(datasets), topo.dim, topo.n_nodes
        E, K = len(topo.range_edges), len(topo.anchor_ranges)
        bset, abset = set(topo.bearing_edges), set(topo.anchor_bearings)
        d = np.zeros((T, E))
        r = np.zeros((T, K))
        u = np.zeros((T, E, p))
        q = np.zeros((T, K, p))
        alpha = np.zeros((T, K, p))
        step = np.zeros((T, n))
        heading = np.zeros((T, n, p))
        for tau, ds in enumerate(datasets):
            try:
                for e, key in enumerate(topo.range_edges):
                    d[tau, e] = ds.ranges[key]
                    if key in bset:
                        u[tau, e] = ds.bearings[key]
                for e, key in enumerate(topo.anchor_ranges):
                    r[tau, e] = ds.anchor_ranges[key]
                    alpha[tau, e] = ds.anchors[key[1]]
                    if key in abset:
                        q[tau, e] = ds.anchor_bearings[key]
            except KeyError as exc:
                raise ConfigurationError(
                    f"tick {ds.tick} lacks measurement {exc.args[0]} required by the window"
                ) from None
            if T > 1 and tau > 0:
                if ds.speeds is None:
                    raise ConfigurationError(f"tick {ds.tick} has no velocity measurements")
                step[tau] = ds.speeds * ds.dt
                heading[tau] = ds.headings
        edges = np.array(topo.range_edges, dtype=int).reshape(E, 2)
        aedges = np.array(topo.anchor_ranges, dtype=int).reshape(K, 2)
        return cls(
            topology=topo,
            layout=Layout(T, n, E, K, p),
            dt=datasets[-1].dt,
            edges=edges,
            anchor_edges=aedges,
            d=d, r=r, u=u,
            u_mask=np.array([e in bset for e in topo.range_edges], dtype=bool),
            q=q,
            q_mask=np.array([e in abset for e in topo.anchor_ranges], dtype=bool),
            alpha=alpha, step=step, heading=heading,
            ticks=tuple(ds.tick for ds in datasets),
        )


@dataclass(frozen=True)
class Weights:
    """Per-edge inverse variances and concentrations for one window."""

    node: np.ndarray        # 1/sigma_ij^2, (E,)
    anchor: np.ndarray      # 1/varsigma_ik^2, (K,)
    vel: np.ndarray         # 1/sigma_i^2, (n,)
    kappa: np.ndarray       # (E,), zero where no bearing
    lam: np.ndarray         # (K,)
    kappa_v: np.ndarray     # (n,)
    sigma_n: float | None   # smallest STD of each kind, for the Lipschitz bound
    sigma_a: float | None
    sigma_v: float | None

    @classmethod
    def from_params(cls, window: WindowData, params: NoiseParams) -> "Weights":
        topo = window.topology
        sn = np.array([params.sigma(i, j) for i, j in topo.range_edges], dtype=float)
        sa = np.array([params.varsigma(i, k) for i, k in topo.anchor_ranges], dtype=float)
        sv = np.array([params.sigma_v(i) for i in range(topo.n_nodes)], dtype=float)
        kap = np.array([params.kappa(i, j) if m else 0.0
                        for (i, j), m in zip(topo.range_edges, window.u_mask)], dtype=float)
        lam = np.array([params.lam(i, k) if m else 0.0
                        for (i, k), m in zip(topo.anchor_ranges, window.q_mask)], dtype=float)
        kv = np.array([params.kappa_v(i) for i in range(topo.n_nodes)], dtype=float)
        return cls(
            node=1.0 / sn**2, anchor=1.0 / sa**2, vel=1.0 / sv**2,
            kappa=kap, lam=lam, kappa_v=kv,
            sigma_n=float(sn.min()) if sn.size else None,
            sigma_a=float(sa.min()) if sa.size else None,
            sigma_v=float(sv.min()) if sv.size else None,
        )


@dataclass(frozen=True)
class ConstraintSet:
    """Ball radii for the auxiliary variables; ``x`` is unconstrained."""

    layout: Layout
    y: np.ndarray  # (T, E)
    w: np.ndarray  # (T, K)
    s: np.ndarray  # (T-1, n)

    @cached_property
    def flat(self) -> np.ndarray:
        """Radii of all auxiliary vectors in ``z`` order."""
        return np.concatenate([self.y.ravel(), self.w.ravel(), self.s.ravel()])


@dataclass(frozen=True)
class QuadraticForm:
    """``M`` (applied edge-wise), ``b`` and the dropped constant of one window."""

    layout: Layout
    incidence: IncidenceStructure
    weights: Weights
    b: np.ndarray
    constant: float
    edges: np.ndarray
    anchor_edges: np.ndarray
    # per-edge data kept for the per-node solver
    alpha: np.ndarray | None = None    # (T, K, p) anchor positions per edge
    u_tilde: np.ndarray | None = None  # (T, E, p)
    q_tilde: np.ndarray | None = None  # (T, K, p)
    v_tilde: np.ndarray | None = None  # (T-1, n, p)

    def apply(self, z: np.ndarray) -> np.ndarray:
        x, y, w, s = self.layout.split(z)
        out = np.empty_like(z)
        mx, my, mw, ms = self.layout.split(out)
        inc, wt = self.incidence, self.weights
        np.multiply(wt.node[:, None], inc.apply_A(x) - y, out=my)
        np.multiply(wt.anchor[:, None], inc.apply_E(x) - w, out=mw)
        np.multiply(wt.vel[:, None], inc.apply_N(x) - s, out=ms)
        mx[...] = inc.apply_AT(my) + inc.apply_ET(mw)
        if self.layout.window > 1:
            mx[1:] += ms
            mx[:-1] -= ms
        np.negative(out[self.layout.sizes[0]:], out=out[self.layout.sizes[0]:])
        return out

    def value(self, z: np.ndarray) -> float:
        """``1/2 z'Mz - b'z`` (the relaxed cost minus ``constant``)."""
        return 0.5 * float(z @ self.apply(z)) - float(self.b @ z)

    def dense(self) -> np.ndarray:
        """Materialize ``M = M1 + M2 + M3`` from the block definitions."""
        lay = self.layout
        if lay.size > 5000:
            raise ValueError("dense M is only meant for small instances")
        T, p = lay.window, lay.dim
        inc, wt = self.incidence, self.weights
        sig_n = np.diag(np.sqrt(np.tile(np.repeat(wt.node, p), T)))
        sig_a = np.diag(np.sqrt(np.tile(np.repeat(wt.anchor, p), T)))
        sig_v = np.diag(np.sqrt(np.tile(np.repeat(wt.vel, p), T - 1)))
        A, Ef, N = inc.A, inc.E_full, inc.N
        nx, ny, nw, ns = lay.sizes

        def outer(rows):
            R = np.hstack(rows)
            return R.T @ R

        M1 = outer([sig_n @ A, -sig_n, np.zeros((ny, nw)), np.zeros((ny, ns))])
        M2 = outer([sig_a @ Ef, np.zeros((nw, ny)), -sig_a, np.zeros((nw, ns))])
        M3 = outer([sig_v @ N, np.zeros((ns, ny)), np.zeros((ns, nw)), -sig_v])
        return M1 + M2 + M3


def _tilde(vectors, conc, radius, mask, strict, what):
    """``conc * vector / radius`` per edge and tick; zero where no bearing or radius 0."""
    out = np.zeros_like(vectors)
    active = mask[None, :] & (conc[None, :] > 0)
    zero = active & (radius <= 0)
    if strict and zero.any():
        tau, e = np.argwhere(zero)[0]
        raise DegenerateMeasurementError(f"zero {what} with a bearing at window slot {tau}, edge {e}")
    ok = active & (radius > 0)
    safe = np.where(ok, radius, 1.0)
    out[ok] = (conc[None, :, None] * vectors / safe[..., None])[ok]
    return out


def assemble(window: WindowData, params: NoiseParams, strict: bool = False):
    """Build ``(QuadraticForm, ConstraintSet)`` for one window.

    A zero range next to a bearing has no usable direction term: by default
    the term is dropped (its ball has radius 0); ``strict=True`` raises
    :class:`DegenerateMeasurementError` instead.
    """
    lay = window.layout
    wt = Weights.from_params(window, params)
    inc = incidence(window.topology, lay.window)
    utilde = _tilde(window.u, wt.kappa, window.d, window.u_mask, strict, "range")
    qtilde = _tilde(window.q, wt.lam, window.r, window.q_mask, strict, "anchor range")
    vmask = np.ones(lay.n_nodes, dtype=bool)
    vtilde = _tilde(window.heading[1:], wt.kappa_v, window.step[1:], vmask, strict, "step")

    wa = wt.anchor[:, None] * window.alpha  # (T, K, p)
    bx = inc.apply_ET(wa)
    b = lay.join(bx, utilde, qtilde - wa, vtilde)
    const = 0.5 * float(np.sum(wt.anchor[:, None] * window.alpha**2))
    form = QuadraticForm(lay, inc, wt, b, const, window.edges, window.anchor_edges,
                         window.alpha.copy(), utilde, qtilde, vtilde)
    cons = ConstraintSet(lay, window.d.copy(), window.r.copy(), window.step[1:].copy())
    return form, cons


def gradient(form: QuadraticForm, z: np.ndarray) -> np.ndarray:
    return form.apply(z) - form.b


# -- costs written out term by term (used as oracles for the matrix form) ----

def relaxed_cost(z: np.ndarray, window: WindowData, params: NoiseParams) -> float:
    """Convex window cost ``f_dist + f_ang + f_vel`` at ``z``, anchor constant included."""
    lay = window.layout
    x, y, w, s = lay.split(np.asarray(z, dtype=float))
    topo = window.topology
    total = 0.0
    for tau in range(lay.window):
        for e, (i, j) in enumerate(topo.range_edges):
            res = x[tau, i] - x[tau, j] - y[tau, e]
            total += 0.5 / params.sigma(i, j) ** 2 * float(res @ res)
            if window.u_mask[e] and window.d[tau, e] > 0:
                total -= params.kappa(i, j) * float(window.u[tau, e] @ y[tau, e]) / window.d[tau, e]
        for e, (i, k) in enumerate(topo.anchor_ranges):
            res = x[tau, i] - window.alpha[tau, e] - w[tau, e]
            total += 0.5 / params.varsigma(i, k) ** 2 * float(res @ res)
            if window.q_mask[e] and window.r[tau, e] > 0:
                total -= params.lam(i, k) * float(window.q[tau, e] @ w[tau, e]) / window.r[tau, e]
    for tau in range(1, lay.window):
        for i in range(lay.n_nodes):
            res = x[tau, i] - x[tau - 1, i] - s[tau - 1, i]
            total += 0.5 / params.sigma_v(i) ** 2 * float(res @ res)
            if window.step[tau, i] > 0:
                total -= (params.kappa_v(i) * float(window.heading[tau, i] @ s[tau - 1, i])
                          / window.step[tau, i])
    return total


def mle_cost(x, window: WindowData, params: NoiseParams) -> float:
    """Nonconvex maximum-likelihood cost of positions ``x`` shaped ``(T, n, p)``.

    Diagnostic only; raises :class:`DegenerateGeometryError` when a direction
    term meets two coincident points. Direction terms whose measured length
    is zero are left out, as in :func:`assemble`.
    """
    lay = window.layout
    x = np.asarray(x, dtype=float).reshape(lay.window, lay.n_nodes, lay.dim)
    topo = window.topology
    total = 0.0

    def direction(vec, what):
        nrm = float(np.linalg.norm(vec))
        if nrm == 0.0:
            raise DegenerateGeometryError(f"degenerate geometry: coincident points on {what}")
        return vec / nrm

    for tau in range(lay.window):
        for e, (i, j) in enumerate(topo.range_edges):
            diff = x[tau, i] - x[tau, j]
            total += 0.5 / params.sigma(i, j) ** 2 * (np.linalg.norm(diff) - window.d[tau, e]) ** 2
            if window.u_mask[e] and window.d[tau, e] > 0:
                total -= params.kappa(i, j) * float(window.u[tau, e] @ direction(diff, f"edge {(i, j)}"))
        for e, (i, k) in enumerate(topo.anchor_ranges):
            diff = x[tau, i] - window.alpha[tau, e]
            total += 0.5 / params.varsigma(i, k) ** 2 * (np.linalg.norm(diff) - window.r[tau, e]) ** 2
            if window.q_mask[e] and window.r[tau, e] > 0:
                total -= params.lam(i, k) * float(window.q[tau, e] @ direction(diff, f"anchor edge {(i, k)}"))
    for tau in range(1, lay.window):
        for i in range(lay.n_nodes):
            diff = x[tau, i] - x[tau - 1, i]
            total += 0.5 / params.sigma_v(i) ** 2 * (np.linalg.norm(diff) - window.step[tau, i]) ** 2
            if window.step[tau, i] > 0:
                total -= params.kappa_v(i) * float(window.heading[tau, i] @ direction(diff, f"node {i} motion"))
    return float(total)


def ball_project(v: np.ndarray, radius: np.ndarray) -> np.ndarray:
    """Project each trailing-axis vector of ``v`` onto the ball of matching radius."""
    nrm = np.sqrt(np.einsum("...i,...i->...", v, v))
    over = nrm > radius
    scale = np.where(over, radius / np.where(over, nrm, 1.0), 1.0)
    return v * scale[..., None]


def best_auxiliary(x, form: QuadraticForm, cons: ConstraintSet) -> np.ndarray:
    """Complete positions ``x`` with the ``(y, w, s)`` minimizing the relaxed cost.

    Each auxiliary block solves ``min 1/2 c ||v - target||^2 - g'v`` over its
    ball, whose minimizer is the projection of ``target + g / c``.
    """
    lay = form.layout
    x = np.asarray(x, dtype=float).reshape(lay.shapes[0])
    inc, wt = form.incidence, form.weights
    _, by, bw, bs = lay.split(form.b)
    # bw = qtilde - c*alpha, so E x + bw / c = E x - alpha + qtilde / c
    y = ball_project(inc.apply_A(x) + by / wt.node[:, None], cons.y)
    w = ball_project(inc.apply_E(x) + bw / wt.anchor[:, None], cons.w)
    s = ball_project(inc.apply_N(x) + bs / wt.vel[:, None], cons.s)
    return lay.join(x, y, w, s)
