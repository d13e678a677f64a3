"""Command line entry point: run experiments, generate demos, draw heatmaps, query the oracle."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .clirl import load_model
from .demos import generate_demoset, save_demos
from .gridworld import THETA1, THETA2, render
from .harness import bfs_safe_oracle, emit_heatmap, load_config, run_experiment

DOMAINS = {"pre": THETA1, "post": THETA2}


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive count, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sailcarl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="multi-trial experiment with pre/post-shift evaluation")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=_u64, required=True)
    run.add_argument("--trials", type=_positive)
    run.add_argument("--method", choices=["sail-carl", "no-constraint", "hand-coded", "all"])

    demos = sub.add_parser("demos", help="generate a demonstration file")
    demos.add_argument("--domain", choices=sorted(DOMAINS), required=True)
    demos.add_argument("--pos", type=_positive, required=True)
    demos.add_argument("--neg", type=_positive, required=True)
    demos.add_argument("--out", required=True)
    demos.add_argument("--seed", type=_u64, required=True)

    heat = sub.add_parser("heatmap", help="render a constraint model as CSV grids and SVG")
    heat.add_argument("--model", required=True)
    heat.add_argument("--out", required=True)

    oracle = sub.add_parser("oracle", help="shortest safe path from start to goal")
    oracle.add_argument("--domain", choices=sorted(DOMAINS), required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "run":
        cfg = load_config(args.config)
        changes = {"seed": args.seed}
        if args.trials is not None:
            changes["trials"] = args.trials
        if args.method is not None:
            changes["method"] = args.method
        result = run_experiment(cfg.replace(**changes), args.out)
        for row in result.summary:
            print(
                f"{row['method']:<14} {row['phase']:<5} success {row['success_mean']:.3f} ± {row['success_std']:.3f}"
                f"  violation {row['violation_mean']:.3f} ± {row['violation_std']:.3f}"
            )
    elif args.command == "demos":
        d = DOMAINS[args.domain]
        save_demos(generate_demoset(d, args.pos, args.neg, args.seed), args.out)
    elif args.command == "heatmap":
        ct, _ = load_model(args.model)
        if ct is None:
            print(f"{args.model}: no constraint records", file=sys.stderr)
            return 1
        emit_heatmap(ct, args.out)
    elif args.command == "oracle":
        res = bfs_safe_oracle(DOMAINS[args.domain])
        if not res.reachable:
            print(json.dumps({"domain": args.domain, "length": None, "result": "no safe path"}))
            return 1
        print(json.dumps({"domain": args.domain, "length": res.length, "path": [render(s) for s in res.path]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
