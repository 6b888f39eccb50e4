"""Oracle checks run by ``hybridloc verify``.

Each check builds random small instances and compares one piece of the
solver with an independent computation: per-node rounds against the
centralized iteration, the matrix gradient against finite differences of
the term-by-term cost, and the closed-form Lipschitz bound against the
spectrum of the dense ``M``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .distributed import run_window
from .graph import build_snapshot
from .measurement import NoiseParams, synthesize_dataset
from .problem import WindowData, assemble, gradient, relaxed_cost
from .solver import SolverConfig, fista_solve, form_lipschitz, lipschitz_bound


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def random_instance(rng: np.random.Generator, window: int, n_max: int = 8, dim: int = 2,
                    per_edge: bool = False):
    """Random fully connected window with 2..n_max nodes and 1..3 anchors.

    About two thirds of the edges carry bearings. With ``per_edge`` every
    edge and node gets its own noise level. Returns ``(WindowData, NoiseParams)``.
    """
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, 4))
    pos = rng.uniform(0.0, 10.0, (n, dim))
    anc = rng.uniform(0.0, 10.0, (m, dim))
    vel = rng.normal(0.0, 1.0, (n, dim))
    base = dict(range_std=float(rng.uniform(0.1, 1.0)), anchor_range_std=float(rng.uniform(0.1, 1.0)),
                bearing_kappa=float(rng.uniform(50, 1000)), anchor_bearing_kappa=float(rng.uniform(50, 1000)),
                speed_std=float(rng.uniform(0.05, 0.5)), heading_kappa=float(rng.uniform(50, 1000)))
    if per_edge:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        apairs = [(i, k) for i in range(n) for k in range(m)]
        base.update(
            edge_range_std={e: float(rng.uniform(0.1, 1.0)) for e in pairs},
            edge_anchor_range_std={e: float(rng.uniform(0.1, 1.0)) for e in apairs},
            node_speed_std={i: float(rng.uniform(0.05, 0.5)) for i in range(n)},
        )
    params = NoiseParams(**base)
    keep = rng.random(n * n + n * m) < 2 / 3
    datasets = []
    for t in range(window):
        snap = build_snapshot(pos + t * vel, anc, range_radius=np.inf,
                              bearing_policy=lambda e: bool(keep[e[0] * n + e[1]]),
                              anchor_bearing_policy=lambda e: bool(keep[n * n + e[0] * m + e[1]]), tick=t)
        datasets.append(synthesize_dataset(snap, vel, params, 1.0, rng))
    return WindowData.from_datasets(datasets), params


def check_distributed(instances: int = 50, seed: int = 0, windows=(1, 2, 4),
                      iter_tol: float = 1e-12, final_tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_iter = worst_final = 0.0
    same_count = True
    t0 = time.perf_counter()
    for k in range(instances):
        win, params = random_instance(rng, windows[k % len(windows)])
        form, cons = assemble(win, params)
        cfg = SolverConfig(keep_iterates=True, momentum="alg1" if k % 2 else "fista", max_iter=3000)
        a = fista_solve(form, cons, cfg)
        b = run_window(form, cons, cfg)
        same_count &= a.iterations == b.iterations
        for za, zb in zip(a.iterates, b.iterates):
            worst_iter = max(worst_iter, _block_rel(za, zb, form.layout))
        worst_final = max(worst_final, float(np.abs(a.z - b.z).max()))
    secs = time.perf_counter() - t0
    ok = same_count and worst_iter <= iter_tol and worst_final <= final_tol
    return CheckResult("distributed-vs-centralized", ok,
                       f"{instances} instances, worst per-iteration blockwise relative {worst_iter:.2e}, "
                       f"worst final {worst_final:.2e}, same iteration counts {same_count}, {secs:.1f}s")


def _block_rel(za, zb, layout) -> float:
    worst = 0.0
    for a, b in zip(layout.split(za), layout.split(zb)):
        if a.size:
            worst = max(worst, float(np.abs(a - b).max()) / max(1.0, float(np.abs(a).max())))
    return worst


def finite_difference_gradient(fun, z: np.ndarray, h: float = 1e-4) -> np.ndarray:
    g = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (fun(z + e) - fun(z - e)) / (2 * h)
    return g


def check_gradient(instances: int = 20, seed: int = 1, tol: float = 1e-6) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(instances):
        win, params = random_instance(rng, (1, 2, 3)[k % 3], n_max=5, per_edge=bool(k % 2))
        form, _ = assemble(win, params)
        z = rng.normal(0.0, 3.0, form.layout.size)
        g = gradient(form, z)
        fd = finite_difference_gradient(lambda v: relaxed_cost(v, win, params), z)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    return CheckResult("gradient-finite-differences", worst <= tol,
                       f"{instances} instances, worst relative error {worst:.2e} (tol {tol:g})")


def check_lipschitz(instances: int = 20, seed: int = 2, windows=(1, 2, 3, 5)) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok = True
    for k in range(instances):
        win, params = random_instance(rng, windows[k % len(windows)], n_max=6, per_edge=bool(k % 2))
        form, _ = assemble(win, params)
        lam = float(np.linalg.eigvalsh(form.dense())[-1])
        bound = form_lipschitz(form)
        ok &= lam <= bound * (1 + 1e-12)
        worst = max(worst, lam / bound)
    toy = lipschitz_bound(2, 1, 1, 1.0, 1.0, 1.0)
    ok &= toy == 8.0
    return CheckResult("lipschitz-spectral", ok,
                       f"{instances} instances, largest lambda_max/bound {worst:.3f}, toy bound {toy:g}")


def run_all(quick: bool = False) -> list:
    n = 10 if quick else None
    return [
        check_distributed(n or 50),
        check_gradient(n or 20),
        check_lipschitz(n or 20),
    ]
