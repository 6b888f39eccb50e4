import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybridloc.graph import build_snapshot
from hybridloc.measurement import NoiseParams, synthesize_dataset
from hybridloc.problem import WindowData, assemble

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_window(rng, n=4, m=2, window=1, dim=2, params=None, bearings="all", noiseless=False):
    """Small fully connected window with straight-line motion."""
    pos = rng.uniform(0.0, 10.0, (n, dim))
    anc = rng.uniform(0.0, 10.0, (m, dim))
    vel = rng.normal(0.0, 1.0, (n, dim))
    if params is None:
        params = NoiseParams(1e-9, 1e-9, 1e12, 1e12, 1e-9, 1e12) if noiseless else NoiseParams(0.3, 0.4, 500, 600, 0.1, 800)
    data = []
    for t in range(window):
        snap = build_snapshot(pos + t * vel, anc, bearing_policy=bearings, tick=t)
        data.append(synthesize_dataset(snap, vel, params, 1.0, rng))
    truth = np.array([pos + t * vel for t in range(window)])
    return WindowData.from_datasets(data), params, truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem(rng):
    win, params, truth = make_window(rng, n=4, m=2, window=3)
    form, cons = assemble(win, params)
    return win, params, form, cons, truth


def exact_datasets(positions, anchors, velocities=None, dt=1.0, bearings="all"):
    """Noise-free datasets built directly from geometry, one per row of ``positions``."""
    from hybridloc.measurement import Dataset

    out = []
    for t, pos in enumerate(positions):
        snap = build_snapshot(pos, anchors, bearing_policy=bearings, tick=t)
        topo = snap.topology
        x, a = snap.nodes, snap.anchors
        unit = lambda v: v / np.linalg.norm(v)  # noqa: E731
        ds = Dataset(
            dim=topo.dim, n_nodes=topo.n_nodes, tick=t, dt=dt, anchors=a.copy(),
            ranges={(i, j): float(np.linalg.norm(x[i] - x[j])) for i, j in topo.range_edges},
            anchor_ranges={(i, k): float(np.linalg.norm(x[i] - a[k])) for i, k in topo.anchor_ranges},
            bearings={(i, j): unit(x[i] - x[j]) for i, j in topo.bearing_edges},
            anchor_bearings={(i, k): unit(x[i] - a[k]) for i, k in topo.anchor_bearings},
        )
        if velocities is not None:
            v = np.asarray(velocities[t], dtype=float)
            ds.speeds = np.linalg.norm(v, axis=1)
            ds.headings = v / ds.speeds[:, None]
        out.append(ds)
    return out


@pytest.fixture(scope="session")
def reference_run():
    """Four nodes, one anchor, solved with 10^6 FISTA iterations.

    The tolerance is tiny so only an exactly repeated iterate stops it early.
    """
    from hybridloc.solver import SolverConfig, fista_solve

    rng = np.random.default_rng(2024)
    win, params, _ = make_window(rng, n=4, m=1, window=2)
    form, cons = assemble(win, params)
    ref = fista_solve(form, cons, SolverConfig(max_iter=10**6, tol=1e-300, backend="compiled"))
    assert ref.iterations == 10**6 or ref.converged
    return form, cons, ref


_ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one line per acceptance criterion; printed in the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
