"""Command line entry point.

    riskgate run [--config FILE] [--method NAME] [--sigma-o X] [--peds N]
                 [--runs N] [--seed S] [--out DIR] [--trace]

A config file supplies flat key=value pairs (see scenario.py for the
schema); command line flags override file keys.  The batch runs n
episodes on consecutive seeds and writes the result layout (runs.csv,
timings.csv, summary.csv, optional trace.jsonl, plotdata/) to the output
directory.  --trace exports step traces for every failed run plus the
first run, which feeds the plotdata series.

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime
failures.
"""

import argparse
import sys

from .harness import monte_carlo
from .results import emit_results
from .scenario import METHODS, parse_config_text, scenario_from_mapping


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskgate",
        description="Closed-loop safety-filter benchmark runner.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a Monte-Carlo batch and write result files")
    run.add_argument("--config", help="flat key=value config file")
    run.add_argument("--method", choices=METHODS, help="safety filter to drive")
    run.add_argument("--sigma-o", dest="sigma_o", type=float,
                     help="pedestrian measurement box half-width [m]")
    run.add_argument("--peds", type=int, choices=(0, 1, 2, 3),
                     help="number of scripted pedestrians")
    run.add_argument("--runs", type=int, help="episodes in the batch (default 1)")
    run.add_argument("--seed", type=int, help="base seed; run i uses seed + i")
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--trace", action="store_true",
                     help="export step traces of failed runs and the first run")
    return parser


def _load_mapping(args) -> dict:
    mapping = {}
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ValueError(f"cannot read config file {args.config}: {exc}") from exc
        mapping = parse_config_text(text)
    if args.method is not None:
        mapping["method"] = args.method
    if args.sigma_o is not None:
        mapping["sigma_o"] = args.sigma_o
    if args.peds is not None:
        mapping["n_pedestrians"] = args.peds
    if args.seed is not None:
        mapping["seed"] = args.seed
    if args.runs is not None:
        mapping["runs"] = args.runs
    return mapping


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags; that is a configuration error here
        return 0 if not exc.code else 1

    try:
        mapping = _load_mapping(args)
        n_runs = int(mapping.get("runs", 1))
        if n_runs < 1:
            raise ValueError("runs must be at least 1")
        cfg = scenario_from_mapping(mapping)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        keep = n_runs if args.trace else 0
        agg, rows, traces = monte_carlo(cfg, n_runs, keep_traces=keep)
        if args.trace:
            keep_ids = {i for i, r in enumerate(rows) if not r.success}
            keep_ids.add(0)
            traces = {i: t for i, t in traces.items() if i in keep_ids}
        emit_results([(cfg, rows, traces)], args.out)
    except Exception as exc:  # noqa: BLE001 -- boundary: map to exit code
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2

    parts = [
        f"method={cfg.method}",
        f"sigma_o={cfg.sigma_o:g}",
        f"peds={cfg.n_pedestrians}",
        f"runs={agg.n_runs}",
        f"sr={agg.sr:.3f}",
    ]
    if agg.mdp is not None:
        parts.append(f"mdp={agg.mdp:.3f}")
    if agg.ct_ms is not None:
        parts.append(f"ct_ms={agg.ct_ms:.3f}")
    if agg.cte is not None:
        parts.append(f"cte={agg.cte:.4f}")
    if agg.cvar_rate is not None:
        parts.append(f"cvar_rate={agg.cvar_rate:.3f}")
    print(" ".join(parts))
    print(f"results written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
