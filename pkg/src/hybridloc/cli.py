"""Command line entry point: ``hybridloc {static,dynamic,params,verify}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import LocalizationError
from .harness import ExperimentConfig, run_experiment

DEFAULT_CONFIGS = {
    "static": "configs/static-anchors-sweep.yaml",
    "dynamic": "configs/lawnmower.yaml",
    "params": "configs/helix-paramfree.yaml",
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridloc", description="Cooperative localization experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("static", "anchor-configuration sweep on static networks"),
                        ("dynamic", "tracking on lawnmower, lap or helix trajectories"),
                        ("params", "parameter-free tracking with parameter traces")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=DEFAULT_CONFIGS[name], help="experiment YAML file")
        p.add_argument("--out", default=None, help="output directory (default results/<name>)")
        p.add_argument("--trials", type=int, default=None, help="override the trial count")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        if name == "dynamic":
            p.add_argument("--method", choices=("convex", "ekf", "both"), default=None,
                           help="methods to run (default from the config)")
    v = sub.add_parser("verify", help="run the oracle checks")
    v.add_argument("--quick", action="store_true", help="fewer random instances")
    v.add_argument("--seed", type=int, default=None, help="override the instance seed")
    return ap


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    changes = {}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "method", None):
        changes["methods"] = ["convex", "ekf"] if args.method == "both" else [args.method]
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    if cfg.mode != args.command:
        raise LocalizationError(f"{args.config} is a {cfg.mode!r} config, not {args.command!r}")
    return cfg


def _verify(args) -> int:
    from . import verify

    n = 10 if args.quick else None
    seeds = {} if args.seed is None else {"seed": args.seed}
    results = [verify.check_distributed(n or 50, **seeds), verify.check_gradient(n or 20, **seeds),
               verify.check_lipschitz(n or 20, **seeds)]
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _verify(args)
        cfg = load_config(args)
        out = Path(args.out or Path("results") / cfg.name)
        bundle = run_experiment(cfg, out)
    except (LocalizationError, ValueError, OSError) as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        for key in ("iteration", "node", "sender", "round", "tick"):
            if getattr(exc, key, None) is not None:
                diag[key] = getattr(exc, key)
        print(json.dumps(diag, sort_keys=True), file=sys.stderr)
        return 2
    for key, value in sorted(bundle.summary.items()):
        print(f"{key} = {value:.6g}")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
