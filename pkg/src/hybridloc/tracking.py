"""Sliding-window convex localization over a stream of datasets."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .measurement import Dataset, NoiseParams
from .problem import Layout, WindowData, assemble
from .solver import FistaResult, SolverConfig, fista_solve, form_lipschitz


@dataclass
class TickResult:
    positions: np.ndarray   # (n, p) estimate at the newest tick
    window: np.ndarray      # (T, n, p) all positions in the window
    iterations: int
    converged: bool
    L: float
    messages: int = 0


def shift_window(z_old: np.ndarray, old: Layout, new: Layout, newest: Optional[Dataset] = None) -> np.ndarray:
    """Warm start for the next window: drop the oldest tick, extrapolate the newest.

    While the window is still filling up (``new.window > old.window``) nothing
    is dropped. The new slot copies the last one, with positions advanced by
    the measured velocity when available. The result is not projected.
    """
    xo, yo, wo, so = old.split(z_old)
    drop = 1 if new.window == old.window else 0
    z = new.zeros()
    x, y, w, s = new.split(z)
    keep = old.window - drop
    x[:keep] = xo[drop:]
    if y.shape[1] == yo.shape[1]:
        y[:keep] = yo[drop:]
        y[keep:] = yo[-1]
    if w.shape[1] == wo.shape[1]:
        w[:keep] = wo[drop:]
        w[keep:] = wo[-1]
    step = np.zeros((new.n_nodes, new.dim))
    if newest is not None and newest.speeds is not None:
        step = newest.speeds[:, None] * newest.headings * newest.dt
    x[keep:] = xo[-1] + step
    if new.window > 1:
        s[: keep - 1] = so[drop:] if old.window > 1 else 0.0
        s[keep - 1:] = step
    return z


class ConvexTracker:
    """Keeps the last ``window`` datasets and solves one window per tick."""

    def __init__(self, window: int = 5, config: Optional[SolverConfig] = None, distributed: bool = False):
        self.window = window
        self.config = config or SolverConfig()
        self.distributed = distributed
        self.history: deque = deque(maxlen=window)
        self._z = None
        self._layout = None

    def reset(self):
        self.history.clear()
        self._z = None
        self._layout = None

    def step(self, dataset: Dataset, params: NoiseParams) -> TickResult:
        self.history.append(dataset)
        win = WindowData.from_datasets(list(self.history))
        form, cons = assemble(win, params)
        z0 = None
        if self._z is not None and self._layout.n_nodes == win.layout.n_nodes:
            z0 = shift_window(self._z, self._layout, win.layout, dataset)
        L = form_lipschitz(form)
        if self.distributed:
            from .distributed import run_window

            out = run_window(form, cons, self.config, z0=z0, L=L)
            z, iters, conv, msgs = out.z, out.iterations, out.converged, out.messages
        else:
            res: FistaResult = fista_solve(form, cons, self.config, z0=z0, L=L)
            z, iters, conv, msgs = res.z, res.iterations, res.converged, 0
        self._z, self._layout = z, win.layout
        x = win.layout.split(z)[0]
        return TickResult(x[-1].copy(), x.copy(), iters, conv, L, msgs)
