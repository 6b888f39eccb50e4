"""Centralized FISTA over the ball-constrained quadratic program."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .graph import max_anchor_count, max_degree
from .problem import ConstraintSet, QuadraticForm, ball_project

MOMENTUM_RULES = ("fista", "alg1")
BACKENDS = ("auto", "numpy", "compiled")


@dataclass
class SolverConfig:
    """Solver settings.

    ``momentum`` is ``"fista"`` ((k-2)/(k+1)) or ``"alg1"`` ((k-1)/k).
    ``backend`` ``"compiled"`` runs the loop in numba, ``"numpy"`` runs the
    reference implementation; ``"auto"`` picks compiled unless a trace or
    the iterates are requested.
    """

    max_iter: int = 2000
    tol: float = 1e-8
    momentum: str = "fista"
    trace: bool = False
    keep_iterates: bool = False
    backend: str = "auto"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.momentum not in MOMENTUM_RULES:
            raise ConfigurationError(f"momentum must be one of {MOMENTUM_RULES}")
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"backend must be one of {BACKENDS}")

    def use_compiled(self) -> bool:
        if self.backend == "auto":
            return not (self.trace or self.keep_iterates)
        return self.backend == "compiled"


def momentum_coefficient(k: int, rule: str = "fista") -> float:
    """Extrapolation weight used when producing iterate ``k`` (``k >= 1``).

    Both rules give 0 at ``k = 1``, where the previous two iterates coincide.
    """
    if rule == "fista":
        return max(k - 2, 0) / (k + 1)
    if rule == "alg1":
        return (k - 1) / k
    raise ConfigurationError(f"unknown momentum rule {rule!r}")


def velocity_chain_degree(window: int) -> int:
    if window <= 1:
        return 0
    return 1 if window == 2 else 2


def lipschitz_bound(delta_max, max_anchors, window, sigma_n=None, sigma_a=None, sigma_v=None) -> float:
    """Closed-form upper bound on the largest eigenvalue of ``M``.

    ``sigma_*`` are the smallest STDs of each measurement kind; ``None``
    drops that kind entirely (no such edges in the network).
    """
    total = 0.0
    for sig, lam_bound in (
        (sigma_n, 2 * delta_max),
        (sigma_a, max_anchors),
        (sigma_v, 2 * velocity_chain_degree(window)),
    ):
        if sig is None:
            continue
        if not sig > 0 or not math.isfinite(sig):
            raise ValueError(f"domain error: standard deviations must be positive, got {sig}")
        total += (lam_bound + 1) / sig**2
    return total


def form_lipschitz(form: QuadraticForm) -> float:
    topo = form.incidence.topology
    wt = form.weights
    # a one-tick window has no velocity edges
    sigma_v = wt.sigma_v if form.layout.window > 1 else None
    return lipschitz_bound(
        max_degree(topo), max_anchor_count(topo), form.layout.window,
        wt.sigma_n, wt.sigma_a, sigma_v,
    )


def project(z: np.ndarray, cons: ConstraintSet) -> np.ndarray:
    lay = cons.layout
    nx, p = lay.sizes[0], lay.dim
    out = np.array(z, dtype=float)
    out[nx:] = ball_project(out[nx:].reshape(-1, p), cons.flat).ravel()
    return out


@dataclass
class FistaResult:
    z: np.ndarray
    iterations: int
    converged: bool
    L: float
    costs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    iterates: list = field(default_factory=list)

    def write_trace(self, fh: TextIO) -> None:
        fh.write("iteration,cost,step_norm\n")
        for k, (c, s) in enumerate(zip(self.costs, self.steps), start=1):
            fh.write(f"{k},{c!r},{s!r}\n")


def fista_solve(
    form: QuadraticForm,
    cons: ConstraintSet,
    config: Optional[SolverConfig] = None,
    z0: Optional[np.ndarray] = None,
    L: Optional[float] = None,
) -> FistaResult:
    """Minimize ``1/2 z'Mz - b'z`` over the product of balls.

    Stops when ``||z_k - z_{k-1}|| / max(1, ||z_k||) < tol`` or after
    ``max_iter`` iterations. ``z0`` is projected first, so any start is
    feasible.
    """
    config = config or SolverConfig()
    if L is None:
        L = form_lipschitz(form)
    if config.use_compiled():
        if config.trace or config.keep_iterates:
            raise ConfigurationError("the compiled backend records no trace; use backend='numpy'")
        return _solve_compiled(form, cons, config, z0, L)
    z_cur = project(form.layout.zeros() if z0 is None else np.asarray(z0, dtype=float), cons)
    z_prev = z_cur
    res = FistaResult(z_cur, 0, False, L)
    if config.keep_iterates:
        res.iterates.append(z_cur.copy())
    b = form.b
    for k in range(1, config.max_iter + 1):
        c = momentum_coefficient(k, config.momentum)
        zh = z_cur + c * (z_cur - z_prev)
        z_new = project(zh - (form.apply(zh) - b) / L, cons)
        step = float(np.linalg.norm(z_new - z_cur))
        if not math.isfinite(step):
            raise DivergenceError(f"divergence: non-finite iterate at iteration {k}", iteration=k)
        if config.trace:
            cost = form.value(z_new)
            if not math.isfinite(cost):
                raise DivergenceError(f"divergence: non-finite cost at iteration {k}", iteration=k)
            res.costs.append(cost)
            res.steps.append(step)
        if config.keep_iterates:
            res.iterates.append(z_new.copy())
        z_prev, z_cur = z_cur, z_new
        res.iterations = k
        if step / max(1.0, float(np.linalg.norm(z_new))) < config.tol:
            res.converged = True
            break
    res.z = z_cur
    return res


def _solve_compiled(form, cons, config, z0, L) -> FistaResult:
    from ._kernels import fista_loop

    lay, wt = form.layout, form.weights
    z0 = form.layout.zeros() if z0 is None else np.array(z0, dtype=float)
    edges = np.ascontiguousarray(form.edges, dtype=np.int64).reshape(-1, 2)
    aedges = np.ascontiguousarray(form.anchor_edges, dtype=np.int64).reshape(-1, 2)
    z, iters, conv = fista_loop(
        np.ascontiguousarray(z0.ravel()), form.b, float(L), cons.flat,
        lay.window, lay.n_nodes, lay.n_edges, lay.n_anchor_edges, lay.dim,
        edges[:, 0].copy(), edges[:, 1].copy(), wt.node, aedges[:, 0].copy(), wt.anchor, wt.vel,
        config.max_iter, config.tol, MOMENTUM_RULES.index(config.momentum),
    )
    if iters < 0:
        raise DivergenceError(f"divergence: non-finite iterate at iteration {-iters}", iteration=-iters)
    return FistaResult(z, int(iters), bool(conv), L)
