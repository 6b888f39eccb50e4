"""Solve one small window with FISTA and dump the per-iteration trace.

Runs a long reference solve, then a logged solve from zero, and writes
``iteration,cost,step`` rows with the gap to the reference cost and the
``2 L ||z0 - z*||^2 / (k + 1)^2`` envelope.

Usage: python3 scripts/convergence_trace.py [--iterations N] [--out trace.csv]
"""
import argparse
import csv

import numpy as np

from hybridloc.graph import build_snapshot
from hybridloc.measurement import NoiseParams, synthesize_dataset
from hybridloc.problem import WindowData, assemble
from hybridloc.solver import SolverConfig, fista_solve, project


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=500)
    ap.add_argument("--reference", type=int, default=10**6)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out", default="convergence_trace.csv")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    pos = rng.uniform(0, 10, (4, 2))
    vel = rng.normal(0, 1, (4, 2))
    anchors = rng.uniform(0, 10, (1, 2))
    params = NoiseParams(0.3, 0.4, 500, 600, 0.1, 800)
    data = [synthesize_dataset(build_snapshot(pos + t * vel, anchors, tick=t), vel, params, 1.0, rng)
            for t in range(2)]
    form, cons = assemble(WindowData.from_datasets(data), params)
    ref = fista_solve(form, cons, SolverConfig(max_iter=args.reference, tol=1e-300))
    f_ref = form.value(ref.z)
    z0 = np.zeros(form.layout.size)
    res = fista_solve(form, cons, SolverConfig(trace=True, max_iter=args.iterations, tol=1e-300), z0=z0)
    radius = float(np.linalg.norm(project(z0, cons) - ref.z) ** 2)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration", "cost", "gap", "envelope", "step"))
        for k, (cost, step) in enumerate(zip(res.costs, res.steps), start=1):
            w.writerow((k, repr(cost), repr(cost - f_ref), repr(2 * res.L * radius / (k + 1) ** 2), repr(step)))
    print(f"reference: {ref.iterations} iterations, cost {f_ref!r}; wrote {args.out}")


if __name__ == "__main__":
    main()
