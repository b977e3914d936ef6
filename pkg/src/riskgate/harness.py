"""Closed-loop episodes and their Monte-Carlo evaluation.

One episode runs measure -> nominal MPC -> safety filter -> plant at a
fixed interval until the path ends, the clearance is violated, or the step
cap hits.  The controller sees the truth only through two noise channels:
vehicle position plus isotropic Gaussian noise (heading taken as measured
exactly), pedestrian position plus uniform box noise; the stochastic
filters then sample Q vehicle and P obstacle hypotheses around those
measurements, so the sampling box models the perception bound itself.

Randomness comes from counter-based Philox generators keyed by the
episode seed (run i of a batch uses base_seed + i), which makes every
output of a (config, seed) pair reproducible bit for bit.  Measurement
noise and scene sampling draw from two separate streams: measurement draws
are then identical across methods on the same seed (common random numbers
for the method comparisons), and the supervised methods' lazy sampling
(only on ticks whose trigger engaged the tail-risk filter) cannot shift
the measurement sequence.  Within the measurement stream the order per
tick is vehicle noise first, then pedestrian noise in index order.

A baseline tick whose filter reports infeasible applies a full stop
instead of the filter's best-effort command: driving on at nominal speed
when the solver has just certified that no safe input exists is the one
clearly wrong choice.  The tick still counts toward the infeasibility
rate.  Supervised ticks already fall back to the always-feasible probe
command.

A run is successful when the true vehicle-pedestrian distance never drops
below the required clearance.  Per-run metrics follow the evaluation
protocol: minimum distance is taken over the avoidance window (some
pedestrian within twice the trigger distance), infeasibility counts failed
solves over attempted solves (a second column counts ticks whose probe
left the certified set), mean tracking error integrates the true
cross-track distance, and the activation rate counts ticks on which the
tail-risk filter was engaged by the trigger.
"""

import math
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .barrier import barrier_value
from .dynamics import (
    ControlInput,
    PedestrianState,
    ReferencePath,
    VehicleState,
    cross_track_error,
    step_pedestrian,
    step_unicycle,
)
from .filters import (
    MODE_CCBF_HARD,
    MODE_RCCBF,
    FilterResult,
    StochasticScene,
    adaptive_cvar_filter,
    cvar_cbf_filter,
    rcbf_filter,
)
from .monitor import classify_step, fresh_state, window_update
from .mpc import mpc_nominal
from .scenario import ScenarioConfig
from .supervisor import FilterMode, SupervisorConfig, supervise_tick

# Reaching this close to the reference end counts as finishing the course.
END_TOLERANCE = 0.5

# Key offset separating the scene-sampling stream from the measurement
# stream; far above any plausible batch seed range.
SCENE_STREAM_OFFSET = 2**32


def make_rng(seed: int) -> np.random.Generator:
    """Philox-keyed generator; counter-based, so seeds are portable."""
    return np.random.Generator(np.random.Philox(key=seed))


def sample_vehicle(measured, sigma_v: float, q: int, rng: np.random.Generator) -> np.ndarray:
    """Q i.i.d. isotropic Gaussian position hypotheses around the measurement."""
    if q < 1:
        raise ValueError("q must be at least 1")
    center = np.asarray(measured, dtype=float)
    return center + sigma_v * rng.standard_normal((q, 2))


def sample_obstacle(measured, sigma_o: float, p: int, rng: np.random.Generator) -> np.ndarray:
    """P i.i.d. uniform draws in the square box of half-width sigma_o."""
    if p < 1:
        raise ValueError("p must be at least 1")
    center = np.asarray(measured, dtype=float)
    return center + rng.uniform(-sigma_o, sigma_o, size=(p, 2))


def sample_scene(rng, veh_meas: VehicleState, peds_meas, cfg: ScenarioConfig) -> StochasticScene:
    vehicle_samples = sample_vehicle((veh_meas.x, veh_meas.y), cfg.sigma_v, cfg.samples_q, rng)
    obstacle_samples = [
        sample_obstacle((p.x, p.y), cfg.sigma_o, cfg.samples_p, rng) for p in peds_meas
    ]
    vels = (
        np.array([[p.vx, p.vy] for p in peds_meas]) if peds_meas else np.zeros((0, 2))
    )
    return StochasticScene(
        theta=veh_meas.theta,
        vehicle_samples=vehicle_samples,
        obstacle_samples=obstacle_samples,
        obstacle_vels=vels,
    )


def scene_h_stats(scene: StochasticScene, params) -> tuple:
    """(mean, min, max) of the barrier over every sampled pair of the scene;
    Nones when the scene holds no obstacles."""
    if not scene.obstacle_samples:
        return None, None, None
    look = params.lookahead * np.array([math.cos(scene.theta), math.sin(scene.theta)])
    pc = scene.vehicle_samples + look
    values = []
    for obs in scene.obstacle_samples:
        d = np.linalg.norm(pc[None, :, :] - obs[:, None, :], axis=-1)
        values.append(d - params.ds)
    h = np.concatenate([v.ravel() for v in values])
    return float(h.mean()), float(h.min()), float(h.max())


@dataclass
class StepRecord:
    """One control tick: what was true, what was seen, what was done."""

    k: int
    x: float
    y: float
    theta: float
    meas_x: float
    meas_y: float
    peds: list
    peds_meas: list
    u_nom_v: float
    u_nom_w: float
    u_v: float
    u_w: float
    mode_selected: int
    mode_used: int
    a: int
    b: int
    m: int
    nu: float
    r_min: float
    feasible: bool
    probe_feasible: bool
    epsilon_used: Optional[float]
    solve_ms: float
    mpc_ms: float
    min_dist: float
    h_true: float
    h_mean: Optional[float]
    h_min: Optional[float]
    h_max: Optional[float]
    cte: float


@dataclass
class RunMetrics:
    seed: int
    success: bool
    min_dist: float
    ir: float
    ir_probe: float
    ct_ms: float
    mpc_ms: float
    cte: float
    cvar_rate: float
    steps: int


@dataclass
class AggregateMetrics:
    """Success rate over all runs; every other field averages successful
    runs only and is None when there are none to average."""

    n_runs: int
    n_success: int
    sr: float
    mdp: Optional[float]
    ir: Optional[float]
    ir_probe: Optional[float]
    ct_ms: Optional[float]
    cte: Optional[float]
    cvar_rate: Optional[float]


def _true_min_distance(veh: VehicleState, peds) -> float:
    if not peds:
        return math.inf
    return min(math.hypot(veh.x - p.x, veh.y - p.y) for p in peds)


def run_episode(cfg: ScenarioConfig) -> tuple:
    """Simulate one closed-loop episode; returns (RunMetrics, trace)."""
    rng = make_rng(cfg.seed)
    rng_scene = make_rng(cfg.seed + SCENE_STREAM_OFFSET)
    path = ReferencePath.straight(cfg.path_length)
    veh = VehicleState(0.0, 0.0, 0.0)
    peds = [s.initial_state() for s in cfg.scripts]
    active = [False] * len(peds)
    monitor = fresh_state(cfg.risk.window)
    sup_cfg = SupervisorConfig(risk=cfg.risk, filter_cfg=cfg.filter_cfg)
    barrier = cfg.barrier
    supervised = cfg.method in ("ft", "qt")

    trace = []
    collided = False
    min_dist = math.inf
    n_solves = n_infeasible = n_probe_bad = n_cvar = 0
    sum_solve = sum_mpc = sum_cte = 0.0

    for k in range(cfg.max_steps):
        # pedestrians start walking when the vehicle closes on their anchor
        s_veh, _, _ = path.project((veh.x, veh.y))
        for j, script in enumerate(cfg.scripts):
            if not active[j] and script.x - s_veh <= cfg.trigger_distance:
                active[j] = True
                peds[j] = script.walking_state(peds[j])

        dists = [math.hypot(veh.x - p.x, veh.y - p.y) for p in peds]
        if dists and min(dists) < cfg.collision_distance:
            collided = True
            break
        if s_veh >= cfg.path_length - END_TOLERANCE:
            break
        in_window = any(d <= 2.0 * cfg.trigger_distance for d in dists)
        if in_window:
            min_dist = min(min_dist, min(dists))

        # measurements: the only channel from truth to controller
        noise_v = cfg.sigma_v * rng.standard_normal(2)
        veh_meas = VehicleState(veh.x + noise_v[0], veh.y + noise_v[1], veh.theta)
        peds_meas = []
        for p in peds:
            box = rng.uniform(-cfg.sigma_o, cfg.sigma_o, size=2)
            peds_meas.append(PedestrianState(p.x + box[0], p.y + box[1], p.vx, p.vy))

        t0 = time.perf_counter()
        u_nom = mpc_nominal(veh_meas, path, cfg.mpc)
        mpc_ms = (time.perf_counter() - t0) * 1e3

        scene = None
        h_stats = (None, None, None)
        epsilon_used = None

        if supervised:
            def sampler():
                nonlocal scene
                scene = sample_scene(rng_scene, veh_meas, peds_meas, cfg)
                return scene

            outcome, monitor = supervise_tick(
                veh_meas, peds_meas, u_nom, sampler, cfg.method, sup_cfg, monitor
            )
            u_applied = outcome.u_applied
            solve_ms = outcome.probe.solve_time + (
                outcome.cvar_result.solve_time if outcome.cvar_result is not None else 0.0
            )
            n_solves += 1 + (outcome.cvar_result is not None)
            n_infeasible += int(not outcome.probe.feasible)
            if outcome.cvar_result is not None:
                n_infeasible += int(not outcome.cvar_result.feasible)
            n_probe_bad += int(outcome.a_k == 0)
            cvar_selected = outcome.mode_selected is FilterMode.CVAR
            rec_fields = dict(
                mode_selected=int(outcome.mode_selected),
                mode_used=int(outcome.mode_used),
                a=outcome.a_k,
                b=outcome.b_k,
                m=outcome.m_k,
                nu=outcome.probe.nu,
                r_min=outcome.probe.r_min,
                feasible=outcome.result.feasible,
                probe_feasible=outcome.probe.feasible,
            )
        else:
            if cfg.method == "rcbf":
                res = rcbf_filter(u_nom, veh_meas, peds_meas, cfg.filter_cfg, barrier)
                cvar_selected = False
            else:
                scene = sample_scene(rng_scene, veh_meas, peds_meas, cfg)
                if cfg.method == "ccbf":
                    res = cvar_cbf_filter(
                        u_nom, scene, replace(cfg.filter_cfg, mode=MODE_CCBF_HARD), barrier
                    )
                elif cfg.method == "accbf":
                    res = adaptive_cvar_filter(u_nom, scene, cfg.filter_cfg, barrier)
                    epsilon_used = res.epsilon_used
                else:  # rccbf: relaxed tail QP every tick, slack uncapped
                    res = cvar_cbf_filter(
                        u_nom, scene, replace(cfg.filter_cfg, mode=MODE_RCCBF), barrier
                    )
                cvar_selected = True
            # an infeasible certificate means no safe forward input exists;
            # stop rather than apply the clipped nominal
            u_applied = res.u_safe if res.feasible else ControlInput(0.0, 0.0)
            solve_ms = res.solve_time
            n_solves += 1
            n_infeasible += int(not res.feasible)
            n_probe_bad += int(not res.feasible)
            b_k = classify_step(res.nu, res.r_min, cfg.risk)
            monitor = window_update(monitor, b_k)
            rec_fields = dict(
                mode_selected=int(cvar_selected),
                mode_used=int(cvar_selected),
                a=int(res.feasible and res.nu <= cfg.risk.nu_bar),
                b=b_k,
                m=monitor.m,
                nu=res.nu,
                r_min=res.r_min,
                feasible=res.feasible,
                probe_feasible=res.feasible,
            )

        if scene is not None:
            h_stats = scene_h_stats(scene, barrier)
        n_cvar += int(cvar_selected)
        sum_solve += solve_ms
        sum_mpc += mpc_ms
        cte_k = cross_track_error(path, (veh.x, veh.y))[0]
        sum_cte += cte_k

        trace.append(
            StepRecord(
                k=k,
                x=veh.x,
                y=veh.y,
                theta=veh.theta,
                meas_x=veh_meas.x,
                meas_y=veh_meas.y,
                peds=[(p.x, p.y) for p in peds],
                peds_meas=[(p.x, p.y) for p in peds_meas],
                u_nom_v=u_nom.v,
                u_nom_w=u_nom.omega,
                u_v=u_applied.v,
                u_w=u_applied.omega,
                epsilon_used=epsilon_used,
                solve_ms=solve_ms,
                mpc_ms=mpc_ms,
                min_dist=min(dists) if dists else math.inf,
                h_true=min(barrier_value(veh, p, barrier) for p in peds) if peds else math.inf,
                h_mean=h_stats[0],
                h_min=h_stats[1],
                h_max=h_stats[2],
                cte=cte_k,
                **rec_fields,
            )
        )

        veh = step_unicycle(veh, u_applied, cfg.ts)
        peds = [step_pedestrian(p, cfg.ts) for p in peds]

    steps = len(trace)
    metrics = RunMetrics(
        seed=cfg.seed,
        success=not collided,
        min_dist=min_dist,
        ir=n_infeasible / n_solves if n_solves else 0.0,
        ir_probe=n_probe_bad / steps if steps else 0.0,
        ct_ms=sum_solve / steps if steps else 0.0,
        mpc_ms=sum_mpc / steps if steps else 0.0,
        cte=sum_cte / steps if steps else 0.0,
        cvar_rate=n_cvar / steps if steps else 0.0,
        steps=steps,
    )
    return metrics, trace


def aggregate(runs) -> AggregateMetrics:
    n = len(runs)
    wins = [r for r in runs if r.success]
    sr = len(wins) / n if n else 0.0

    def mean(values):
        vals = [v for v in values if math.isfinite(v)]
        return sum(vals) / len(vals) if vals else None

    if not wins:
        return AggregateMetrics(n, 0, sr, None, None, None, None, None, None)
    return AggregateMetrics(
        n_runs=n,
        n_success=len(wins),
        sr=sr,
        mdp=mean(r.min_dist for r in wins),
        ir=mean(r.ir for r in wins),
        ir_probe=mean(r.ir_probe for r in wins),
        ct_ms=mean(r.ct_ms for r in wins),
        cte=mean(r.cte for r in wins),
        cvar_rate=mean(r.cvar_rate for r in wins),
    )


def monte_carlo(cfg: ScenarioConfig, n_runs: int, base_seed: Optional[int] = None, keep_traces: int = 0):
    """Independent episodes on consecutive seeds; returns
    (AggregateMetrics, per-run metrics, {run_index: trace})."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    base = cfg.seed if base_seed is None else base_seed
    rows = []
    traces = {}
    for i in range(n_runs):
        run_cfg = replace(cfg, seed=base + i, scripts=cfg.scripts)
        metrics, trace = run_episode(run_cfg)
        rows.append(metrics)
        if i < keep_traces:
            traces[i] = trace
    return aggregate(rows), rows, traces
