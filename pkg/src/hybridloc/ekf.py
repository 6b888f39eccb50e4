"""Extended Kalman filter baseline on the same range / bearing / velocity data.

Three motion models are available:

``"node"`` (default)
    one filter per node with a position-only state; the measured velocity
    drives the prediction and ``process_noise`` (m^2 per tick) is added to
    the covariance. Node-node measurements use the neighbor's predicted
    estimate, with its covariance folded into the measurement noise.
``"cv"``
    constant velocity: state holds position and velocity of every node,
    velocity measurements enter as observations, process noise is white
    acceleration with intensity ``process_noise`` (m^2/s^3).
``"control"``
    position-only state, the measured velocity drives the prediction,
    ``process_noise`` (m^2 per tick) is added to the position covariance.

``"cv"`` and ``"control"`` are centralized: one joint state over all nodes,
so node-node ranges update both endpoints consistently.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, FilterDivergenceError
from .measurement import Dataset, NoiseParams

EKF_MODELS = ("node", "cv", "control")


@dataclass
class EkfTuning:
    process_noise: float = 0.05
    model: str = "node"
    init_std: float = 2.0

    def __post_init__(self):
        if self.model not in EKF_MODELS:
            raise ConfigurationError(f"unknown EKF motion model {self.model!r}")
        if not self.process_noise > 0:
            raise ConfigurationError("process_noise must be positive")


@dataclass
class EkfState:
    mean: np.ndarray   # (n*p,) or (2*n*p,) positions first, then velocities
    cov: np.ndarray
    n_nodes: int
    dim: int

    def positions(self) -> np.ndarray:
        return self.mean[: self.n_nodes * self.dim].reshape(self.n_nodes, self.dim).copy()

    def check(self, tick) -> None:
        sym = 0.5 * (self.cov + self.cov.T)
        if not np.all(np.isfinite(sym)) or np.linalg.eigvalsh(sym)[0] <= 0:
            raise FilterDivergenceError(f"EKF covariance lost positive definiteness at tick {tick}", tick=tick)
        self.cov = sym


@dataclass
class NodeFilters:
    """Independent per-node filters: ``means`` (n, p), ``covs`` (n, p, p)."""

    means: np.ndarray
    covs: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def node_state(self, i: int) -> EkfState:
        return EkfState(self.means[i].copy(), self.covs[i].copy(), 1, self.dim)

    def positions(self) -> np.ndarray:
        return self.means.copy()

    def check(self, tick) -> None:
        for i in range(self.n_nodes):
            st = self.node_state(i)
            st.check(tick)
            self.covs[i] = st.cov


def init_state(truth0, tuning: EkfTuning, rng: np.random.Generator, velocity0=None) -> EkfState:
    """Initial estimate: truth plus Gaussian noise of STD ``init_std`` per axis."""
    truth0 = np.asarray(truth0, dtype=float)
    n, p = truth0.shape
    pos = truth0 + rng.normal(0.0, tuning.init_std, size=truth0.shape) if tuning.init_std > 0 else truth0.copy()
    var0 = max(tuning.init_std, 1e-3) ** 2
    if tuning.model == "node":
        return NodeFilters(pos, np.repeat(var0 * np.eye(p)[None], n, axis=0))
    if tuning.model == "control":
        return EkfState(pos.ravel(), var0 * np.eye(n * p), n, p)
    vel = np.zeros((n, p)) if velocity0 is None else np.asarray(velocity0, dtype=float)
    cov = np.diag(np.concatenate([np.full(n * p, var0), np.full(n * p, 1.0)]))
    return EkfState(np.concatenate([pos.ravel(), vel.ravel()]), cov, n, p)


def _predict(state: EkfState, ds: Dataset, tuning: EkfTuning, params: NoiseParams):
    n, p, dt = state.n_nodes, state.dim, ds.dt
    npos = n * p
    if tuning.model == "control":
        if ds.speeds is not None:
            state.mean = state.mean + (ds.speeds[:, None] * ds.headings * dt).ravel()
            step_var = np.repeat([params.sigma_v(i) ** 2 for i in range(n)], p)
        else:
            step_var = np.zeros(npos)
        state.cov = state.cov + np.diag(step_var + tuning.process_noise)
        return
    F = np.eye(2 * npos)
    F[:npos, npos:] = dt * np.eye(npos)
    q = tuning.process_noise
    blk = np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]]) * q
    Q = np.kron(blk, np.eye(npos))
    state.mean = F @ state.mean
    state.cov = F @ state.cov @ F.T + Q


def _observations(state: EkfState, ds: Dataset, tuning: EkfTuning, params: NoiseParams):
    """Stack residuals, Jacobians and noise variances for one tick."""
    n, p = state.n_nodes, state.dim
    npos = n * p
    dimx = state.mean.size
    pos = state.mean[:npos].reshape(n, p)
    res, rows, var = [], [], []

    def add_range(i, other, j_col, meas, sig):
        diff = pos[i] - other
        dist = np.linalg.norm(diff)
        if dist < 1e-9:
            return
        u = diff / dist
        h = np.zeros(dimx)
        h[i * p:(i + 1) * p] = u
        if j_col is not None:
            h[j_col * p:(j_col + 1) * p] = -u
        res.append(meas - dist)
        rows.append(h)
        var.append(sig**2)

    def add_bearing(i, other, j_col, meas, kappa):
        diff = pos[i] - other
        dist = np.linalg.norm(diff)
        if dist < 1e-9:
            return
        u = diff / dist
        J = (np.eye(p) - np.outer(u, u)) / dist
        for c in range(p):
            h = np.zeros(dimx)
            h[i * p:(i + 1) * p] = J[c]
            if j_col is not None:
                h[j_col * p:(j_col + 1) * p] = -J[c]
            res.append(meas[c] - u[c])
            rows.append(h)
            var.append(1.0 / kappa)

    for (i, j), d in sorted(ds.ranges.items()):
        add_range(i, pos[j], j, d, params.sigma(i, j))
    for (i, k), r in sorted(ds.anchor_ranges.items()):
        add_range(i, ds.anchors[k], None, r, params.varsigma(i, k))
    for (i, j), u in sorted(ds.bearings.items()):
        add_bearing(i, pos[j], j, u, params.kappa(i, j))
    for (i, k), q in sorted(ds.anchor_bearings.items()):
        add_bearing(i, ds.anchors[k], None, q, params.lam(i, k))
    if tuning.model == "cv" and ds.speeds is not None:
        vel = state.mean[npos:].reshape(n, p)
        beta = ds.speeds[:, None] * ds.headings
        for i in range(n):
            # speed noise along track, heading noise across it
            sv = (params.sigma_v(i) / ds.dt) ** 2
            sh = ds.speeds[i] ** 2 / params.kappa_v(i)
            for c in range(p):
                h = np.zeros(dimx)
                h[npos + i * p + c] = 1.0
                res.append(beta[i, c] - vel[i, c])
                rows.append(h)
                var.append(sv + sh)
    return np.array(res), np.array(rows).reshape(len(rows), dimx), np.array(var)


def _node_step(filt: NodeFilters, ds: Dataset, tuning: EkfTuning, params: NoiseParams, predict: bool):
    n, p = filt.n_nodes, filt.dim
    if predict:
        if ds.speeds is not None:
            filt.means = filt.means + ds.speeds[:, None] * ds.headings * ds.dt
            filt.covs = filt.covs + np.array([params.sigma_v(i) ** 2 for i in range(n)])[:, None, None] * np.eye(p)
        filt.covs = filt.covs + tuning.process_noise * np.eye(p)
    # every node linearizes against the same predicted neighbor states
    prior_m, prior_P = filt.means.copy(), filt.covs.copy()
    rows = [[] for _ in range(n)]  # (residual, jacobian row, variance)

    def add(i, other, other_cov, meas, sig2, kind):
        diff = prior_m[i] - other
        dist = float(np.linalg.norm(diff))
        if dist < 1e-9:
            return
        u = diff / dist
        if kind == "range":
            extra = 0.0 if other_cov is None else float(u @ other_cov @ u)
            rows[i].append((meas - dist, u, sig2 + extra))
            return
        J = (np.eye(p) - np.outer(u, u)) / dist
        for c in range(p):
            extra = 0.0 if other_cov is None else float(J[c] @ other_cov @ J[c])
            rows[i].append((meas[c] - u[c], J[c], sig2 + extra))

    for (i, j), d in sorted(ds.ranges.items()):
        s2 = params.sigma(i, j) ** 2
        add(i, prior_m[j], prior_P[j], d, s2, "range")
        add(j, prior_m[i], prior_P[i], d, s2, "range")
    for (i, k), r in sorted(ds.anchor_ranges.items()):
        add(i, ds.anchors[k], None, r, params.varsigma(i, k) ** 2, "range")
    for (i, j), u in sorted(ds.bearings.items()):
        k2 = 1.0 / params.kappa(i, j)
        add(i, prior_m[j], prior_P[j], u, k2, "bearing")
        add(j, prior_m[i], prior_P[i], -np.asarray(u), k2, "bearing")
    for (i, k), q in sorted(ds.anchor_bearings.items()):
        add(i, ds.anchors[k], None, q, 1.0 / params.lam(i, k), "bearing")
    for i in range(n):
        if not rows[i]:
            continue
        y = np.array([r[0] for r in rows[i]])
        H = np.array([r[1] for r in rows[i]])
        R = np.diag([r[2] for r in rows[i]])
        P = prior_P[i]
        S = H @ P @ H.T + R
        K = np.linalg.solve(S, H @ P).T
        filt.means[i] = prior_m[i] + K @ y
        IKH = np.eye(p) - K @ H
        filt.covs[i] = IKH @ P @ IKH.T + K @ R @ K.T
    filt.check(ds.tick)
    return filt


def ekf_step(state, ds: Dataset, tuning: EkfTuning, params: NoiseParams, predict: bool = True):
    if isinstance(state, NodeFilters):
        return _node_step(state, ds, tuning, params, predict)
    if predict:
        _predict(state, ds, tuning, params)
    y, H, var = _observations(state, ds, tuning, params)
    if y.size:
        P = state.cov
        S = H @ P @ H.T + np.diag(var)
        K = np.linalg.solve(S, H @ P).T
        state.mean = state.mean + K @ y
        IKH = np.eye(P.shape[0]) - K @ H
        # Joseph form keeps the covariance symmetric positive definite
        state.cov = IKH @ P @ IKH.T + K @ np.diag(var) @ K.T
    state.check(ds.tick)
    return state


def ekf_run(
    truth0,
    datasets: Sequence[Dataset],
    params: NoiseParams,
    tuning: EkfTuning,
    rng: np.random.Generator,
) -> np.ndarray:
    """Filter a dataset stream; returns position estimates shaped ``(T, n, p)``."""
    velocity0 = None
    first = datasets[0]
    if first.speeds is not None:
        velocity0 = first.speeds[:, None] * first.headings
    state = init_state(truth0, tuning, rng, velocity0)
    out = np.zeros((len(datasets),) + state.positions().shape)
    for t, ds in enumerate(datasets):
        ekf_step(state, ds, tuning, params, predict=t > 0)
        out[t] = state.positions()
    return out


def grid_search_tune(
    evaluate,
    grid: Iterable[float],
    tuning_seeds: Sequence[int],
    evaluation_seeds: Sequence[int] = (),
    model: str = "node",
    init_std: float = 2.0,
) -> EkfTuning:
    """Pick the process-noise value with the lowest mean error over ``tuning_seeds``.

    ``evaluate(tuning, seed)`` returns the trajectory-averaged MNE of one run.
    """
    grid = list(grid)
    if not grid:
        raise ConfigurationError("empty EKF tuning grid")
    if set(tuning_seeds) & set(evaluation_seeds):
        raise ConfigurationError("tuning and evaluation seeds must be disjoint")
    best, best_score = None, np.inf
    for q in grid:
        tuning = EkfTuning(process_noise=q, model=model, init_std=init_std)
        score = float(np.mean([evaluate(tuning, seed) for seed in tuning_seeds]))
        if score < best_score:
            best, best_score = tuning, score
    return best
