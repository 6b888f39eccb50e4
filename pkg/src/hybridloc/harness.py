"""Monte Carlo experiment runner: configs, seeding, trials, result tables.

A run is fully determined by its config and base seed. Trial ``m`` draws its
measurement noise from ``SeedSequence([seed, m, stream])`` so adding or
removing trials leaves the others untouched. Results are written as CSV
tables plus a ``manifest.json`` (config, config hash, seeds, versions).
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ekf import EkfTuning, ekf_run, grid_search_tune
from .errors import ConfigurationError
from .graph import dump_snapshot
from .measurement import NoiseParams, inject_outliers, synthesize_dataset
from .metrics import coefficient_of_variation, mne, mpe, node_errors, outlier_response
from .params import EstimationConfig, run_parameter_free
from .problem import WindowData, assemble
from .scenarios import make_scenario, static_network
from .solver import SolverConfig, fista_solve
from .tracking import ConvexTracker

MODES = ("static", "dynamic", "params")
METHODS = ("convex", "ekf")
WORKERS_ENV = "HYBRIDLOC_WORKERS"

# independent random streams inside one trial
STREAM_DATA, STREAM_EKF, STREAM_NETWORK, STREAM_TUNING = 0, 1, 2, 3

PAPER_NOISE = dict(range_std=0.5, anchor_range_std=0.5, bearing_kappa=1000.0,
                   anchor_bearing_kappa=1000.0, speed_std=0.1, heading_kappa=1000.0)


@dataclass
class ExperimentConfig:
    """One experiment. ``noise`` holds the true noise levels (``NoiseParams`` fields).

    ``static`` holds ``static_network`` arguments plus ``configurations``;
    ``scenario`` is ``{"name": ..., **generator arguments}``; ``outliers`` is
    ``{"edges": [["anchor", [0, 0]], ...], "factor": 5, "probability": 0.1}``;
    ``defaults`` are the parameter-free starting values.
    """

    name: str
    mode: str
    trials: int = 100
    seed: int = 0
    noise: dict = field(default_factory=lambda: dict(PAPER_NOISE))
    solver: dict = field(default_factory=dict)
    window: int = 5
    distributed: bool = False
    scenario: dict = field(default_factory=lambda: {"name": "lawnmower"})
    static: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: ["convex", "ekf"])
    ekf: dict = field(default_factory=dict)
    outliers: Optional[dict] = None
    defaults: dict = field(default_factory=dict)
    estimation: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if self.window < 1:
            raise ConfigurationError("window must be at least 1")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigurationError(f"unknown methods {sorted(bad)}")
        # validate the nested blocks early
        try:
            self.noise_params()
            self.default_params()
            self.solver_config()
            self.estimation_config()
        except TypeError as exc:
            raise ConfigurationError(f"bad config block: {exc}") from None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        import yaml

        with open(path) as fh:
            try:
                data = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigurationError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: expected a mapping at top level")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def noise_params(self) -> NoiseParams:
        return NoiseParams(**self.noise)

    def default_params(self) -> NoiseParams:
        return NoiseParams(**(self.defaults or {}))

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    def estimation_config(self) -> EstimationConfig:
        return EstimationConfig(**self.estimation)

    def ekf_settings(self) -> dict:
        base = dict(model="cv", init_std=2.0, grid=[0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0], tuning_trials=5)
        base.update(self.ekf or {})
        return base


def trial_seed(base: int, trial: int, stream: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base), int(trial), int(stream), *map(int, extra)])


def trial_rng(base: int, trial: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(trial_seed(base, trial, stream, *extra))


# -- tables -------------------------------------------------------------------

@dataclass
class Table:
    """Rows of plain values; floats are written with ``repr`` so reading is exact."""

    columns: tuple
    rows: list

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_cell(v) for v in row])

    @classmethod
    def read(cls, path) -> "Table":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            columns = tuple(next(r))
            rows = [tuple(_parse(v) for v in row) for row in r]
        return cls(columns, rows)

    def column(self, name) -> list:
        k = self.columns.index(name)
        return [row[k] for row in self.rows]


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _parse(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


# -- trials -------------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def _scenario_cached(blob: str):
    spec = json.loads(blob)
    name = spec.pop("name")
    return make_scenario(name, **spec)


def scenario_of(config: ExperimentConfig):
    return _scenario_cached(json.dumps(config.scenario, sort_keys=True))


def _outlier_edges(config: ExperimentConfig):
    spec = config.outliers or {}
    return [(kind, tuple(edge)) for kind, edge in spec.get("edges", [])]


def trial_data(config: ExperimentConfig, rng: np.random.Generator):
    """Measurements for one run of the dynamic scenario, and the outlier ticks."""
    sc = scenario_of(config)
    params = config.noise_params()
    edges = _outlier_edges(config)
    spec = config.outliers or {}
    data, events = [], []
    for t in range(sc.ticks):
        snap = sc.snapshot(t)
        ds = synthesize_dataset(snap, sc.velocities[t], params, sc.dt, rng)
        if edges:
            ds = inject_outliers(ds, snap, edges, float(spec.get("factor", 5.0)),
                                 float(spec.get("probability", 0.1)), rng)
            if ds.corrupted:
                events.append(t)
        data.append(ds)
    return data, events


def _convex_track(config: ExperimentConfig, data, params):
    tracker = ConvexTracker(config.window, config.solver_config(), distributed=config.distributed)
    est, info = [], []
    for ds in data:
        r = tracker.step(ds, params)
        est.append(r.positions)
        info.append((r.iterations, r.converged, r.messages))
    return np.array(est), info


def _ekf_track(config: ExperimentConfig, data, tuning: EkfTuning, rng):
    sc = scenario_of(config)
    return ekf_run(sc.nodes[0], data, config.noise_params(), tuning, rng)


def dynamic_trial(config: ExperimentConfig, trial: int, tuning: Optional[EkfTuning]) -> dict:
    sc = scenario_of(config)
    data, events = trial_data(config, trial_rng(config.seed, trial, STREAM_DATA))
    out = {"events": events, "errors": {}, "solver": []}
    if "convex" in config.methods:
        est, info = _convex_track(config, data, config.noise_params())
        out["errors"]["convex"] = node_errors(est, sc.nodes)
        out["solver"] = info
    if "ekf" in config.methods:
        est = _ekf_track(config, data, tuning, trial_rng(config.seed, trial, STREAM_EKF))
        out["errors"]["ekf"] = node_errors(est, sc.nodes)
    return out


def tune_ekf(config: ExperimentConfig) -> tuple[EkfTuning, list]:
    """Grid search over process noise on tuning trials disjoint from the evaluation trials."""
    sc = scenario_of(config)
    opts = config.ekf_settings()
    scores = []

    def evaluate(tuning, seed_id):
        k = -seed_id - 1
        data, _ = trial_data(config, trial_rng(config.seed, k, STREAM_TUNING))
        est = _ekf_track(config, data, tuning, trial_rng(config.seed, k, STREAM_TUNING, 1))
        score = float(node_errors(est, sc.nodes).mean())
        scores.append((tuning.process_noise, seed_id, score))
        return score

    tuning_ids = [-(k + 1) for k in range(int(opts["tuning_trials"]))]
    best = grid_search_tune(evaluate, opts["grid"], tuning_ids, list(range(config.trials)),
                            model=opts["model"], init_std=float(opts["init_std"]))
    return best, scores


def static_network_for(config: ExperimentConfig, c: int):
    kwargs = {k: v for k, v in config.static.items() if k != "configurations"}
    return static_network(np.random.default_rng(np.random.SeedSequence([config.seed, STREAM_NETWORK, c])), **kwargs)


def static_trial(config: ExperimentConfig, trial: int) -> np.ndarray:
    """Per-node errors ``(C, N)`` of one trial over all anchor configurations."""
    params = config.noise_params()
    out = []
    for c in range(int(config.static.get("configurations", 10))):
        snap = static_network_for(config, c)
        rng = trial_rng(config.seed, trial, STREAM_DATA, c)
        ds = synthesize_dataset(snap, None, params, 1.0, rng)
        form, cons = assemble(WindowData.from_datasets([ds]), params)
        res = fista_solve(form, cons, config.solver_config())
        x = form.layout.split(res.z)[0][0]
        out.append(node_errors(x, snap.nodes))
    return np.array(out)


def params_trial(config: ExperimentConfig, trial: int) -> dict:
    sc = scenario_of(config)
    data, _ = trial_data(config, trial_rng(config.seed, trial, STREAM_DATA))
    known, _ = _convex_track(config, data, config.noise_params())
    pf = run_parameter_free(data, config.default_params(), config.window, config.solver_config(),
                            config.estimation_config(), config.distributed)
    return {"known": node_errors(known, sc.nodes), "estimated": node_errors(pf.positions, sc.nodes),
            "trace": pf.trace}


def _call(args):
    fn, config, trial, extra = args
    return fn(config, trial, *extra)


def map_trials(fn, config: ExperimentConfig, extra=(), workers: Optional[int] = None) -> list:
    """Run ``fn(config, trial, *extra)`` for every trial; results ordered by trial index."""
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(fn, config, m, tuple(extra)) for m in range(config.trials)]
    if workers <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call, jobs))


# -- experiments ---------------------------------------------------------------

@dataclass
class ResultBundle:
    config: ExperimentConfig
    tables: dict = field(default_factory=dict)   # name -> Table
    summary: dict = field(default_factory=dict)  # scalar statistics
    arrays: dict = field(default_factory=dict)   # in-memory arrays for analysis

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, table in sorted(self.tables.items()):
            table.write(out / f"{name}.csv")
        manifest = {
            "name": self.config.name,
            "mode": self.config.mode,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "base_seed": self.config.seed,
            "trial_seeds": [[self.config.seed, m] for m in range(self.config.trials)],
            "versions": versions(),
            "files": sorted(f"{name}.csv" for name in self.tables),
            "summary": {k: _json_num(v) for k, v in sorted(self.summary.items())},
        }
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _json_num(v):
    v = float(v)
    return v if math.isfinite(v) else str(v)


def versions() -> dict:
    import scipy

    from . import __version__

    return {"hybridloc": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _segment_summary(prefix, trace, curved, summary):
    summary[f"{prefix}.mean"] = float(trace.mean())
    summary[f"{prefix}.cv"] = coefficient_of_variation(trace)
    summary[f"{prefix}.peak"] = float(trace.max())
    if curved.any():
        summary[f"{prefix}.curved_mean"] = float(trace[curved].mean())
    if (~curved).any():
        summary[f"{prefix}.straight_mean"] = float(trace[~curved].mean())


def run_dynamic(config: ExperimentConfig, workers=None) -> ResultBundle:
    sc = scenario_of(config)
    bundle = ResultBundle(config)
    tuning = None
    if "ekf" in config.methods:
        tuning, scores = tune_ekf(config)
        bundle.tables["ekf_tuning"] = Table(("process_noise", "tuning_seed", "score"), scores)
        bundle.summary["ekf.process_noise"] = tuning.process_noise
    results = map_trials(dynamic_trial, config, (tuning,), workers)
    name = config.scenario.get("name", "scenario")
    mne_rows, err_rows, solver_rows, event_rows, resp_rows = [], [], [], [], []
    settle = int(config.analysis.get("settle", config.window))
    skip = int(config.analysis.get("skip", 10))
    for method in config.methods:
        errs = np.stack([r["errors"][method] for r in results])   # (M, T, N)
        trace = errs.mean(axis=(0, 2))
        bundle.arrays[method] = errs
        _segment_summary(method, trace, sc.curved, bundle.summary)
        mne_rows += [(name, method, t, float(v)) for t, v in enumerate(trace)]
        per_trial = errs.mean(axis=2)
        err_rows += [(m, method, t, float(per_trial[m, t]))
                     for m in range(config.trials) for t in range(sc.ticks)]
        if config.outliers:
            for m, r in enumerate(results):
                resp = outlier_response(per_trial[m], r["events"], settle, skip)
                resp_rows.append((m, method, resp.peak, resp.recovery, resp.baseline, resp.events))
    for m, r in enumerate(results):
        solver_rows += [(m, t, it, int(conv), msgs) for t, (it, conv, msgs) in enumerate(r["solver"])]
        event_rows += [(m, t) for t in r["events"]]
    bundle.tables["mne"] = Table(("scenario", "method", "tick", "value"), mne_rows)
    bundle.tables["trial_errors"] = Table(("trial", "method", "tick", "error"), err_rows)
    bundle.tables["curved"] = Table(("tick", "curved"), [(t, int(c)) for t, c in enumerate(sc.curved)])
    if solver_rows:
        bundle.tables["solver"] = Table(("trial", "tick", "iterations", "converged", "messages"), solver_rows)
    if config.outliers:
        bundle.tables["outlier_ticks"] = Table(("trial", "tick"), event_rows)
        bundle.tables["outlier_response"] = Table(
            ("trial", "method", "peak", "recovery", "baseline", "events"), resp_rows)
        if set(config.methods) == set(METHODS):
            by = {(row[0], row[1]): row for row in resp_rows}
            peak = np.mean([by[(m, "convex")][2] < by[(m, "ekf")][2] for m in range(config.trials)])
            rec = np.mean([by[(m, "convex")][3] < by[(m, "ekf")][3] for m in range(config.trials)])
            both = np.mean([by[(m, "convex")][2] < by[(m, "ekf")][2] and by[(m, "convex")][3] < by[(m, "ekf")][3]
                            for m in range(config.trials)])
            bundle.summary.update({"outliers.peak_win_rate": float(peak),
                                   "outliers.recovery_win_rate": float(rec),
                                   "outliers.both_win_rate": float(both)})
    return bundle


def run_static(config: ExperimentConfig, workers=None) -> ResultBundle:
    bundle = ResultBundle(config)
    results = np.stack(map_trials(static_trial, config, (), workers))   # (M, C, N)
    n_conf = results.shape[1]
    per_conf = results.mean(axis=(0, 2))
    bundle.arrays["errors"] = results
    bundle.tables["mpe"] = Table(("configuration", "mpe"), [(c, float(v)) for c, v in enumerate(per_conf)])
    bundle.tables["trial_errors"] = Table(
        ("configuration", "trial", "error"),
        [(c, m, float(results[m, c].mean())) for c in range(n_conf) for m in range(config.trials)])
    bundle.summary.update({"mpe.mean": float(per_conf.mean()), "mpe.std": float(per_conf.std()),
                           "mpe.relative_std": float(per_conf.std() / per_conf.mean())})
    return bundle


def run_params(config: ExperimentConfig, workers=None) -> ResultBundle:
    sc = scenario_of(config)
    bundle = ResultBundle(config)
    results = map_trials(params_trial, config, (), workers)
    name = config.scenario.get("name", "scenario")
    mne_rows, trace_rows = [], []
    for method in ("known", "estimated"):
        errs = np.stack([r[method] for r in results])
        trace = errs.mean(axis=(0, 2))
        bundle.arrays[method] = errs
        bundle.summary[f"{method}.mean"] = float(trace.mean())
        bundle.summary[f"{method}.final"] = float(trace[-1])
        mne_rows += [(name, method, t, float(v)) for t, v in enumerate(trace)]
    for m, r in enumerate(results):
        for row in r["trace"]:
            ident = "-".join(str(v) for v in (row.id if isinstance(row.id, tuple) else (row.id,)))
            trace_rows.append((m, row.tick, row.kind, ident, row.sigma, row.kappa, int(row.clamped), row.samples))
    bundle.tables["mne"] = Table(("scenario", "method", "tick", "value"), mne_rows)
    bundle.tables["traces"] = Table(("trial", "tick", "kind", "id", "sigma", "kappa", "clamped", "samples"),
                                    trace_rows)
    bundle.summary["final_ratio"] = bundle.summary["estimated.final"] / bundle.summary["known.final"]
    bundle.summary["ticks"] = sc.ticks
    return bundle


RUNNERS = {"static": run_static, "dynamic": run_dynamic, "params": run_params}


def run_experiment(config: ExperimentConfig, out_dir=None, workers=None) -> ResultBundle:
    """Run every trial of ``config``; write the tables to ``out_dir`` when given."""
    bundle = RUNNERS[config.mode](config, workers)
    if config.mode == "static" and out_dir is not None:
        net_dir = Path(out_dir) / "networks"
        net_dir.mkdir(parents=True, exist_ok=True)
        for c in range(int(config.static.get("configurations", 10))):
            with open(net_dir / f"configuration_{c}.txt", "w") as fh:
                dump_snapshot(static_network_for(config, c), fh)
    if out_dir is not None:
        bundle.write(out_dir)
    return bundle


def sigma_trace_median(trace_table: Table, kinds=("range", "anchor_range")) -> dict:
    """Median estimated range STD per tick across edges and trials."""
    cols = trace_table.columns
    k_tick, k_kind, k_sigma = cols.index("tick"), cols.index("kind"), cols.index("sigma")
    per_tick: dict[int, list] = {}
    for row in trace_table.rows:
        if row[k_kind] in kinds:
            per_tick.setdefault(row[k_tick], []).append(row[k_sigma])
    return {t: float(np.median(v)) for t, v in sorted(per_tick.items())}


def mne_from_errors(errors: np.ndarray) -> np.ndarray:
    """``(M, T, N)`` node errors to the per-tick MNE."""
    return errors.mean(axis=(0, 2))


__all__ = [
    "ExperimentConfig", "ResultBundle", "Table", "run_experiment", "run_static", "run_dynamic",
    "run_params", "trial_seed", "trial_rng", "mne", "mpe", "sigma_trace_median", "tune_ekf",
]
