"""Online noise-parameter estimation from solver residuals (parameter-free mode).

After each tick the estimated positions give predicted ranges, bearings and
velocities; the mismatch with the measurements updates running sums:

* range STD: ``sigma^2 = sum (d - d_hat)^2 / t``
* bearing concentration: ``gamma_bar = ||sum (u - u_hat) / ||u - u_hat|| || / t``
  and ``kappa = gamma_bar (p - gamma_bar^2) / (1 - gamma_bar^2)``
* velocity: the same on speed and heading, with the velocity estimated from
  lagged position differences. Heading residuals are summed without
  normalization, unlike the bearing residuals.

The concentration estimator assumes vMF unit-vector samples around one
mean direction. Two ways of producing such samples are offered
(``EstimationConfig.directions``):

``"aligned"`` (default)
    each measured direction is rotated so its predicted direction becomes
    the first axis; only the component along that axis survives the sum, so
    ``gamma_bar`` is the mean cosine between measured and predicted
    directions. This is consistent for vMF noise.
``"normalized"``
    the normalized residuals ``(u - u_hat) / ||u - u_hat||`` (and raw
    heading residuals) are summed. These are not vMF samples; their mean
    resultant length shrinks like ``1/sqrt(t)``, so the concentrations come
    out near zero whatever the true noise.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .measurement import Dataset, NoiseParams
from .solver import SolverConfig
from .tracking import ConvexTracker

VELOCITY_LAGS = ((5, 3, 5), (4, 2, 6), (1, 1, 7))  # (weight, newer lag, older lag)
HISTORY_LEN = 8
DIRECTION_MODES = ("aligned", "normalized")
VELOCITY_REFERENCES = ("lagged", "current")
VELOCITY_CENTER = 4  # the lagged difference is exact for the derivative at t - 4


@dataclass
class EstimationConfig:
    """Clamps and warm-up rules for the parameter-free mode.

    Until an estimate has ``min_samples`` residuals and the tick counter is
    past ``warmup_ticks`` the default parameters are used.
    """

    sigma_floor: float = 1e-3
    kappa_cap: float = 1e6
    kappa_floor: float = 1e-6
    warmup_ticks: int = 7
    min_samples: int = 10
    directions: str = "aligned"
    velocity_reference: str = "lagged"

    def __post_init__(self):
        if self.velocity_reference not in VELOCITY_REFERENCES:
            raise ConfigurationError(f"velocity_reference must be one of {VELOCITY_REFERENCES}")
        if self.directions not in DIRECTION_MODES:
            raise ConfigurationError(f"directions must be one of {DIRECTION_MODES}")
        if not (0 < self.sigma_floor and 0 < self.kappa_floor < self.kappa_cap):
            raise ConfigurationError("need 0 < sigma_floor and 0 < kappa_floor < kappa_cap")
        if self.warmup_ticks < 0 or self.min_samples < 1:
            raise ConfigurationError("warmup_ticks must be >= 0 and min_samples >= 1")


def kappa_estimate(gamma_bar: float, p: int) -> float:
    """``gamma_bar (p - gamma_bar^2) / (1 - gamma_bar^2)``; infinite at ``gamma_bar = 1``."""
    if not 0.0 <= gamma_bar <= 1.0 + 1e-12:
        raise ValueError(f"domain error: mean resultant length must be in [0, 1], got {gamma_bar}")
    den = 1.0 - gamma_bar**2
    if den <= 0.0:
        return math.inf
    return gamma_bar * (p - gamma_bar**2) / den


def velocity_from_history(history: Sequence[np.ndarray]) -> Optional[np.ndarray]:
    """Lagged finite-difference velocity times ``dT`` at tick ``t``.

    ``history`` holds past estimates oldest first and must end with
    ``x(t-1)``; at least ``x(t-7) .. x(t-1)`` are needed. Returns ``None``
    during warm-up.
    """
    if len(history) < 7:
        return None
    h = lambda lag: np.asarray(history[-lag], dtype=float)  # noqa: E731
    return sum(wgt * (h(new) - h(old)) for wgt, new, old in VELOCITY_LAGS) / 32.0


@dataclass
class _Scalar:
    """Running squared-residual sum."""

    total: float = 0.0
    count: int = 0

    def add(self, r: float) -> None:
        self.total += r * r
        self.count += 1

    def sigma(self) -> float:
        return math.sqrt(self.total / self.count)


@dataclass
class _Direction:
    """Running sum of residual direction vectors."""

    vec: np.ndarray
    count: int = 0

    def add(self, v: np.ndarray) -> None:
        self.vec = self.vec + v
        self.count += 1

    def gamma_bar(self) -> float:
        return float(np.linalg.norm(self.vec)) / self.count


@dataclass
class ParamAccumulators:
    """Running residual sums per edge and per node, plus a short position history."""

    dim: int
    ranges: dict = field(default_factory=dict)           # (i, j) -> _Scalar
    anchor_ranges: dict = field(default_factory=dict)    # (i, k) -> _Scalar
    bearings: dict = field(default_factory=dict)         # (i, j) -> _Direction
    anchor_bearings: dict = field(default_factory=dict)  # (i, k) -> _Direction
    speeds: dict = field(default_factory=dict)           # i -> _Scalar (meters per tick)
    headings: dict = field(default_factory=dict)         # i -> _Direction
    t: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LEN))
    measured: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LEN))  # (step lengths, headings)

    def _dir(self, table, key):
        if key not in table:
            table[key] = _Direction(np.zeros(self.dim))
        return table[key]


def _unit(v):
    n = float(np.linalg.norm(v))
    return None if n == 0.0 else v / n


def _aligned(u, u_hat, dim):
    """``u`` rotated so that ``u_hat`` is the first axis, projected on that axis."""
    out = np.zeros(dim)
    out[0] = float(np.dot(u, u_hat))
    return out


def residual_update(acc: ParamAccumulators, estimate: np.ndarray, ds: Dataset,
                    directions: str = "aligned", velocity_reference: str = "lagged") -> ParamAccumulators:
    """Fold the residuals of one tick into ``acc`` (in place) and return it.

    ``estimate`` is the ``(n, p)`` position estimate for ``ds``'s tick. In
    ``"normalized"`` mode a bearing residual that is exactly zero has no
    direction and is skipped. ``velocity_reference`` picks the measured
    velocity the lagged estimate is compared with: ``"lagged"`` uses the one
    from the tick the estimate is centred on, ``"current"`` the newest.
    """
    if velocity_reference not in VELOCITY_REFERENCES:
        raise ConfigurationError(f"velocity_reference must be one of {VELOCITY_REFERENCES}")
    if directions not in DIRECTION_MODES:
        raise ConfigurationError(f"directions must be one of {DIRECTION_MODES}")
    x = np.asarray(estimate, dtype=float)
    acc.t += 1
    for (i, j), d in ds.ranges.items():
        acc.ranges.setdefault((i, j), _Scalar()).add(d - float(np.linalg.norm(x[i] - x[j])))
    for (i, k), r in ds.anchor_ranges.items():
        acc.anchor_ranges.setdefault((i, k), _Scalar()).add(r - float(np.linalg.norm(x[i] - ds.anchors[k])))
    for table, meas, other in ((acc.bearings, ds.bearings, lambda j: x[j]),
                               (acc.anchor_bearings, ds.anchor_bearings, lambda k: ds.anchors[k])):
        for (i, j), u in meas.items():
            u_hat = _unit(x[i] - other(j))
            if u_hat is None:
                continue
            if directions == "aligned":
                acc._dir(table, (i, j)).add(_aligned(u, u_hat, acc.dim))
                continue
            res = _unit(np.asarray(u) - u_hat)
            if res is not None:
                acc._dir(table, (i, j)).add(res)
    if ds.speeds is not None:
        acc.measured.append((ds.speeds * ds.dt, np.asarray(ds.headings)))
    beta_dt = velocity_from_history(acc.history) if acc.t > 7 else None
    if beta_dt is not None and ds.speeds is not None:
        # the lagged difference is centred VELOCITY_CENTER ticks back
        steps, heads = acc.measured[-1 - VELOCITY_CENTER] if velocity_reference == "lagged" else acc.measured[-1]
        for i in range(x.shape[0]):
            step_hat = float(np.linalg.norm(beta_dt[i]))
            acc.speeds.setdefault(i, _Scalar()).add(steps[i] - step_hat)
            if step_hat > 0:
                v_hat = beta_dt[i] / step_hat
                if directions == "aligned":
                    acc._dir(acc.headings, i).add(_aligned(heads[i], v_hat, acc.dim))
                else:
                    acc._dir(acc.headings, i).add(heads[i] - v_hat)
    acc.history.append(x.copy())
    return acc


@dataclass
class Estimate:
    value: float
    clamped: bool
    samples: int


def _sigma(acc: _Scalar, cfg: EstimationConfig) -> Estimate:
    s = acc.sigma()
    return Estimate(max(s, cfg.sigma_floor), s < cfg.sigma_floor, acc.count)


def _kappa(acc: _Direction, p: int, cfg: EstimationConfig) -> Estimate:
    k = kappa_estimate(min(acc.gamma_bar(), 1.0), p)
    clamped = not cfg.kappa_floor <= k <= cfg.kappa_cap
    return Estimate(min(max(k, cfg.kappa_floor), cfg.kappa_cap), clamped, acc.count)


def current_estimates(acc: ParamAccumulators, cfg: EstimationConfig) -> dict:
    """Clamped estimates keyed by ``(kind, id)``; ids are edges or node indices."""
    out = {}
    for kind, table, fn in (("range", acc.ranges, _sigma), ("anchor_range", acc.anchor_ranges, _sigma),
                            ("speed", acc.speeds, _sigma)):
        for key, a in table.items():
            if a.count:
                out[(kind, key)] = fn(a, cfg)
    for kind, table in (("bearing", acc.bearings), ("anchor_bearing", acc.anchor_bearings),
                        ("heading", acc.headings)):
        for key, a in table.items():
            if a.count:
                out[(kind, key)] = _kappa(a, acc.dim, cfg)
    return out


_TABLES = {
    "range": "edge_range_std", "anchor_range": "edge_anchor_range_std", "speed": "node_speed_std",
    "bearing": "edge_bearing_kappa", "anchor_bearing": "edge_anchor_bearing_kappa",
    "heading": "node_heading_kappa",
}


def params_from_estimates(estimates: dict, defaults: NoiseParams, acc: ParamAccumulators,
                          cfg: EstimationConfig) -> NoiseParams:
    """Defaults overridden by every estimate that is past warm-up."""
    tables = {name: {} for name in _TABLES.values()}
    if acc.t > cfg.warmup_ticks:
        for (kind, key), est in estimates.items():
            if est.samples >= cfg.min_samples:
                tables[_TABLES[kind]][key] = est.value
    return NoiseParams(
        range_std=defaults.range_std, anchor_range_std=defaults.anchor_range_std,
        bearing_kappa=defaults.bearing_kappa, anchor_bearing_kappa=defaults.anchor_bearing_kappa,
        speed_std=defaults.speed_std, heading_kappa=defaults.heading_kappa, **tables,
    )


@dataclass
class TraceRow:
    tick: int
    kind: str
    id: tuple
    sigma: float   # NaN for concentration rows
    kappa: float   # NaN for STD rows
    clamped: bool
    samples: int


@dataclass
class ParamFreeResult:
    positions: np.ndarray   # (T, n, p)
    trace: list             # TraceRow
    params: NoiseParams     # parameters in force after the last tick
    iterations: list

    def write_trace(self, fh) -> None:
        fh.write("tick,kind,id,sigma,kappa,clamped,samples\n")
        for r in self.trace:
            ident = "-".join(str(v) for v in (r.id if isinstance(r.id, tuple) else (r.id,)))
            fh.write(f"{r.tick},{r.kind},{ident},{r.sigma!r},{r.kappa!r},{int(r.clamped)},{r.samples}\n")


def run_parameter_free(
    datasets: Sequence[Dataset],
    defaults: NoiseParams,
    window: int = 5,
    solver: Optional[SolverConfig] = None,
    config: Optional[EstimationConfig] = None,
    distributed: bool = False,
) -> ParamFreeResult:
    """Track with parameters re-estimated after every tick.

    Each tick is solved with the parameters in force (defaults during
    warm-up), then the residuals of the new estimate update the
    accumulators and the parameters for the next tick.
    """
    config = config or EstimationConfig()
    for name in ("range_std", "anchor_range_std", "bearing_kappa", "anchor_bearing_kappa",
                 "speed_std", "heading_kappa"):
        if getattr(defaults, name) is None:
            raise ConfigurationError(f"default {name} is required in parameter-free mode")
    tracker = ConvexTracker(window, solver, distributed=distributed)
    acc = ParamAccumulators(datasets[0].dim)
    params = defaults
    out, trace, iters = [], [], []
    for ds in datasets:
        res = tracker.step(ds, params)
        out.append(res.positions)
        iters.append(res.iterations)
        residual_update(acc, res.positions, ds, config.directions, config.velocity_reference)
        est = current_estimates(acc, config)
        for (kind, key), e in sorted(est.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
            is_std = kind in ("range", "anchor_range", "speed")
            trace.append(TraceRow(ds.tick, kind, key, e.value if is_std else math.nan,
                                  math.nan if is_std else e.value, e.clamped, e.samples))
        params = params_from_estimates(est, defaults, acc, config)
    return ParamFreeResult(np.array(out), trace, params, iters)
