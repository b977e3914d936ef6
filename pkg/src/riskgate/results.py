"""Result files: per-run CSVs, aggregate summaries, and trace exports.

emit_results lays out one output directory:

    runs.csv      one row per episode (method, sigma_o, n_pedestrians,
                  then the per-run metrics).  Wall-clock columns live in
                  timings.csv instead, so replaying a (config, seed) batch
                  reproduces runs.csv byte for byte.
    timings.csv   mean per-step filter and planner solve times per episode;
                  machine-dependent, hence quarantined from runs.csv.
    summary.csv   one row per batch with the success-conditioned aggregates.
    trace.jsonl   flagged runs only: a run header line carrying the episode
                  outcome and the config facts needed to recompute metrics,
                  followed by one line per step record.
    plotdata/     series of the first exported trace: trajectory.csv,
                  h_band.csv (sampled-barrier band), h_true.csv.

Floats are written with repr and therefore round-trip exactly: recomputing
the summary from runs.csv + timings.csv reproduces summary.csv, and
recomputing a run's metrics from its trace.jsonl lines reproduces the
emitted RunMetrics.
"""

import csv
import json
import math
import os
from dataclasses import asdict
from typing import Optional, Sequence

from .harness import RunMetrics, aggregate

RUNS_FIELDS = (
    "method", "sigma_o", "n_pedestrians", "seed", "success",
    "min_dist", "ir", "ir_probe", "cte", "cvar_rate", "steps",
)
TIMINGS_FIELDS = ("method", "sigma_o", "n_pedestrians", "seed", "ct_ms", "mpc_ms")
SUMMARY_FIELDS = (
    "method", "sigma_o", "n_pedestrians", "n_runs", "n_success",
    "sr", "mdp", "ir", "ir_probe", "ct_ms", "cte", "cvar_rate",
)

SUPERVISED_METHODS = ("ft", "qt")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _read_csv(path) -> list:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


def _parse_bool(text: str) -> bool:
    if text == "True":
        return True
    if text == "False":
        return False
    raise ValueError(f"expected True or False, got {text!r}")


def _opt_float(text: str) -> Optional[float]:
    return None if text == "" else float(text)


def emit_results(batches: Sequence, out_dir: str) -> dict:
    """Write the full output layout; returns {name: path}.

    batches: (config, rows, traces) triples, where rows is the per-run
    RunMetrics list of the batch and traces maps run indices to step-record
    lists.  Order is preserved everywhere, so identical batches yield
    identical bytes in the deterministic files.
    """
    plot_dir = os.path.join(out_dir, "plotdata")
    try:
        os.makedirs(plot_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc

    run_rows, timing_rows, summary_rows = [], [], []
    for cfg, rows, _ in batches:
        key = (cfg.method, cfg.sigma_o, cfg.n_pedestrians)
        for r in rows:
            run_rows.append(key + (r.seed, r.success, r.min_dist, r.ir,
                                   r.ir_probe, r.cte, r.cvar_rate, r.steps))
            timing_rows.append(key + (r.seed, r.ct_ms, r.mpc_ms))
        agg = aggregate(rows)
        summary_rows.append(key + (agg.n_runs, agg.n_success, agg.sr, agg.mdp,
                                   agg.ir, agg.ir_probe, agg.ct_ms, agg.cte,
                                   agg.cvar_rate))

    paths = {
        "runs": os.path.join(out_dir, "runs.csv"),
        "timings": os.path.join(out_dir, "timings.csv"),
        "summary": os.path.join(out_dir, "summary.csv"),
        "plotdata": plot_dir,
    }
    _write_csv(paths["runs"], RUNS_FIELDS, run_rows)
    _write_csv(paths["timings"], TIMINGS_FIELDS, timing_rows)
    _write_csv(paths["summary"], SUMMARY_FIELDS, summary_rows)

    flagged = [
        (cfg, rows[i], traces[i])
        for cfg, rows, traces in batches
        for i in sorted(traces)
    ]
    if flagged:
        paths["trace"] = os.path.join(out_dir, "trace.jsonl")
        _write_trace_jsonl(paths["trace"], flagged)

    first = flagged[0] if flagged else None
    _write_plotdata(plot_dir, first)
    return paths


def _write_trace_jsonl(path, flagged):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for cfg, metrics, steps in flagged:
                header = {
                    "kind": "run",
                    "method": cfg.method,
                    "sigma_o": cfg.sigma_o,
                    "n_pedestrians": cfg.n_pedestrians,
                    "trigger_distance": cfg.trigger_distance,
                    "collision_distance": cfg.collision_distance,
                    "ts": cfg.ts,
                    "seed": metrics.seed,
                    "success": metrics.success,
                    "steps": metrics.steps,
                }
                fh.write(json.dumps(header, sort_keys=True) + "\n")
                for rec in steps:
                    line = {"kind": "step", **asdict(rec)}
                    fh.write(json.dumps(line, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _write_plotdata(plot_dir, flagged_run):
    if flagged_run is None:
        cfg, steps, ts = None, [], 0.0
        traj_header = ("k", "t", "x", "y")
    else:
        cfg, _, steps = flagged_run
        ts = cfg.ts
        ped_cols = tuple(
            f"ped{j}_{axis}" for j in range(cfg.n_pedestrians) for axis in ("x", "y")
        )
        traj_header = ("k", "t", "x", "y") + ped_cols

    traj_rows = []
    band_rows = []
    true_rows = []
    for rec in steps:
        t = rec.k * ts
        ped_flat = tuple(v for p in rec.peds for v in p)
        traj_rows.append((rec.k, t, rec.x, rec.y) + ped_flat)
        if rec.h_mean is not None:
            band_rows.append((rec.k, t, rec.h_mean, rec.h_min, rec.h_max))
        true_rows.append((rec.k, t, rec.h_true))

    _write_csv(os.path.join(plot_dir, "trajectory.csv"), traj_header, traj_rows)
    _write_csv(
        os.path.join(plot_dir, "h_band.csv"),
        ("k", "t", "h_mean", "h_min", "h_max"),
        band_rows,
    )
    _write_csv(os.path.join(plot_dir, "h_true.csv"), ("k", "t", "h_true"), true_rows)


def read_runs_csv(path) -> list:
    """Typed rows of runs.csv."""
    out = []
    for row in _read_csv(path):
        out.append(
            {
                "method": row["method"],
                "sigma_o": float(row["sigma_o"]),
                "n_pedestrians": int(row["n_pedestrians"]),
                "seed": int(row["seed"]),
                "success": _parse_bool(row["success"]),
                "min_dist": float(row["min_dist"]),
                "ir": float(row["ir"]),
                "ir_probe": float(row["ir_probe"]),
                "cte": float(row["cte"]),
                "cvar_rate": float(row["cvar_rate"]),
                "steps": int(row["steps"]),
            }
        )
    return out


def read_timings_csv(path) -> dict:
    """(method, sigma_o, n_pedestrians, seed) -> (ct_ms, mpc_ms)."""
    out = {}
    for row in _read_csv(path):
        key = (row["method"], float(row["sigma_o"]), int(row["n_pedestrians"]),
               int(row["seed"]))
        out[key] = (float(row["ct_ms"]), float(row["mpc_ms"]))
    return out


def read_summary_csv(path) -> list:
    out = []
    for row in _read_csv(path):
        out.append(
            {
                "method": row["method"],
                "sigma_o": float(row["sigma_o"]),
                "n_pedestrians": int(row["n_pedestrians"]),
                "n_runs": int(row["n_runs"]),
                "n_success": int(row["n_success"]),
                "sr": float(row["sr"]),
                "mdp": _opt_float(row["mdp"]),
                "ir": _opt_float(row["ir"]),
                "ir_probe": _opt_float(row["ir_probe"]),
                "ct_ms": _opt_float(row["ct_ms"]),
                "cte": _opt_float(row["cte"]),
                "cvar_rate": _opt_float(row["cvar_rate"]),
            }
        )
    return out


def recompute_summary(runs_path, timings_path) -> list:
    """Rebuild summary rows from the per-run files; matches summary.csv
    because every float round-trips exactly."""
    timings = read_timings_csv(timings_path)
    groups: dict = {}
    for row in read_runs_csv(runs_path):
        key = (row["method"], row["sigma_o"], row["n_pedestrians"])
        ct_ms, mpc_ms = timings[key + (row["seed"],)]
        metrics = RunMetrics(
            seed=row["seed"],
            success=row["success"],
            min_dist=row["min_dist"],
            ir=row["ir"],
            ir_probe=row["ir_probe"],
            ct_ms=ct_ms,
            mpc_ms=mpc_ms,
            cte=row["cte"],
            cvar_rate=row["cvar_rate"],
            steps=row["steps"],
        )
        groups.setdefault(key, []).append(metrics)

    out = []
    for key, rows in groups.items():
        agg = aggregate(rows)
        out.append(
            {
                "method": key[0],
                "sigma_o": key[1],
                "n_pedestrians": key[2],
                "n_runs": agg.n_runs,
                "n_success": agg.n_success,
                "sr": agg.sr,
                "mdp": agg.mdp,
                "ir": agg.ir,
                "ir_probe": agg.ir_probe,
                "ct_ms": agg.ct_ms,
                "cte": agg.cte,
                "cvar_rate": agg.cvar_rate,
            }
        )
    return out


def read_trace_jsonl(path) -> list:
    """[(run header, [step dict, ...]), ...] in file order."""
    runs = []
    try:
        with open(path, encoding="utf-8") as fh:
            for n, raw in enumerate(fh, start=1):
                line = json.loads(raw)
                kind = line.pop("kind", None)
                if kind == "run":
                    runs.append((line, []))
                elif kind == "step":
                    if not runs:
                        raise ValueError(f"{path}:{n}: step record before any run header")
                    runs[-1][1].append(line)
                else:
                    raise ValueError(f"{path}:{n}: unknown record kind {kind!r}")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    return runs


def metrics_from_trace(header: dict, steps: list) -> RunMetrics:
    """Recompute the per-run metrics from exported step records.

    Mirrors the episode loop's accumulation order, so with exact float
    round-tripping the result equals the emitted RunMetrics.
    """
    supervised = header["method"] in SUPERVISED_METHODS
    window = 2.0 * header["trigger_distance"]
    n = len(steps)
    min_dist = math.inf
    attempted = failed = probe_bad = n_cvar = 0
    sum_solve = sum_mpc = sum_cte = 0.0
    for rec in steps:
        if supervised:
            cvar_tried = rec["mode_selected"] == 1
            attempted += 1 + int(cvar_tried)
            failed += int(not rec["probe_feasible"])
            # a tried tail QP that was not the one applied came back infeasible
            failed += int(cvar_tried and rec["mode_used"] == 0)
            probe_bad += int(rec["a"] == 0)
        else:
            attempted += 1
            failed += int(not rec["probe_feasible"])
            probe_bad += int(not rec["probe_feasible"])
        n_cvar += int(rec["mode_selected"] == 1)
        sum_solve += rec["solve_ms"]
        sum_mpc += rec["mpc_ms"]
        sum_cte += rec["cte"]
        if rec["min_dist"] <= window:
            min_dist = min(min_dist, rec["min_dist"])
    return RunMetrics(
        seed=header["seed"],
        success=header["success"],
        min_dist=min_dist,
        ir=failed / attempted if attempted else 0.0,
        ir_probe=probe_bad / n if n else 0.0,
        ct_ms=sum_solve / n if n else 0.0,
        mpc_ms=sum_mpc / n if n else 0.0,
        cte=sum_cte / n if n else 0.0,
        cvar_rate=n_cvar / n if n else 0.0,
        steps=n,
    )
