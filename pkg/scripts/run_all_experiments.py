"""Run every shipped config and write the results under ``results/<name>``.

Usage: python3 scripts/run_all_experiments.py [--trials N] [--out DIR]
"""
import argparse
import dataclasses
import time
from pathlib import Path

from hybridloc.harness import ExperimentConfig, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=None, help="override every trial count")
    ap.add_argument("--out", default=str(ROOT / "results"))
    args = ap.parse_args()
    for path in sorted((ROOT / "configs").glob("*.yaml")):
        cfg = ExperimentConfig.load(path)
        if args.trials:
            cfg = dataclasses.replace(cfg, trials=args.trials)
        t0 = time.perf_counter()
        bundle = run_experiment(cfg, Path(args.out) / cfg.name)
        print(f"{cfg.name} ({cfg.trials} trials, {time.perf_counter() - t0:.1f}s)")
        for key, value in sorted(bundle.summary.items()):
            print(f"  {key} = {value:.6g}")


if __name__ == "__main__":
    main()
