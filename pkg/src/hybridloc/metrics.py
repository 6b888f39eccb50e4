"""Error metrics and the trajectory statistics used to compare methods."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def node_errors(estimates, truth) -> np.ndarray:
    """Euclidean error of every node, same leading shape as the inputs minus the last axis."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: estimates {est.shape} vs truth {tru.shape}")
    return np.linalg.norm(est - tru, axis=-1)


def mne(estimates, truth) -> np.ndarray:
    """Mean navigation error per tick.

    ``estimates`` and ``truth`` are ``(M, T, N, p)`` (trials, ticks, nodes,
    dim); the result is ``(T,)``, the error averaged over trials and nodes.
    """
    err = node_errors(estimates, truth)
    if err.ndim != 3:
        raise ValueError(f"expected (M, T, N, p) arrays, got {np.shape(estimates)}")
    return err.mean(axis=(0, 2))


def mpe(estimates, truth) -> float:
    """Mean positioning error of static estimates shaped ``(M, N, p)``."""
    err = node_errors(estimates, truth)
    if err.ndim != 2:
        raise ValueError(f"expected (M, N, p) arrays, got {np.shape(estimates)}")
    return float(err.mean())


def coefficient_of_variation(trace) -> float:
    trace = np.asarray(trace, dtype=float)
    return float(trace.std() / trace.mean())


@dataclass
class OutlierResponse:
    peak: float
    recovery: float   # mean ticks per outlier event until the error is back under 2x baseline
    baseline: float
    events: int


def outlier_response(errors: Sequence[float], events: Sequence[int], settle: int, skip: int = 0,
                     factor: float = 2.0) -> OutlierResponse:
    """Peak error and recovery time of one trial's per-tick error trace.

    ``baseline`` is the median error over ticks unaffected by outliers (no
    outlier in the last ``settle`` ticks) after the first ``skip`` ticks.
    For each outlier tick the recovery time counts ticks from the outlier
    until the error is at most ``factor * baseline`` (0 when it never left).
    ``peak`` is the largest error after ``skip``.
    """
    e = np.asarray(errors, dtype=float)
    affected = np.zeros(len(e), dtype=bool)
    for t in events:
        affected[t:t + settle] = True
    clean = ~affected
    clean[:skip] = False
    base = float(np.median(e[clean])) if clean.any() else float(np.median(e[skip:]))
    rec = []
    for t in events:
        r = 0
        while t + r < len(e) and e[t + r] > factor * base:
            r += 1
        rec.append(r)
    return OutlierResponse(float(e[skip:].max()), float(np.mean(rec)) if rec else 0.0, base, len(rec))
