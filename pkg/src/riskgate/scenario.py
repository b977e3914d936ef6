"""Scenario configuration and the flat key-value config format.

A scenario bundles the jaywalk geometry, the two noise channels, sample
counts, the method under test, and the nested controller configs.  One
sampling interval feeds the MPC, the risk window, and the plant stepper
alike; configs that disagree on it are rejected before any simulation.

Config files are plain text, one `key = value` per line, `#` comments.
Dotted keys address the nested configs.  Recognized keys:

    method                rcbf | ccbf | accbf | rccbf | ft | qt
    seed, runs            integers
    n_pedestrians         0..3 (0 keeps the safety layer idle)
    sigma_v               vehicle localization std [m]
    sigma_o               obstacle box half-width [m]
    samples_p, samples_q  obstacle / vehicle sample counts
    max_steps             episode cap [ticks]
    path_length           straight reference length [m]
    trigger_distance      along-path distance that starts a crossing [m]
    collision_distance    clearance below which a run fails [m]
    ts                    control interval [s]
    ped<j>.x/.y/.vx/.vy   crossing script overrides, j = 1..3
    risk.window/.budget/.margin/.nu_bar
    filter.rho_nu/.epsilon
    bounds.v_min/.v_max/.omega_max
    mpc.horizon/.w_pos/.w_head/.w_u/.w_du/.v_ref/.pp_lookahead
    barrier.kappa/.ds/.lookahead

Unknown keys are errors: silently ignored typos would skew a study.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .barrier import BarrierParams
from .dynamics import InputBounds, PedestrianState
from .filters import FilterConfig
from .monitor import RiskBudgetConfig
from .mpc import MpcConfig

METHODS = ("rcbf", "ccbf", "accbf", "rccbf", "ft", "qt")

# Anchors as fractions of the path so desk-scale paths keep every
# encounter.  The first and last walkers cross briskly, timed so that a
# vehicle holding nominal speed meets them near the lane centerline while
# a vehicle that brakes early only waits a few seconds.  The middle walker
# strolls alongside the lane without ever entering it: it is harmless in
# truth, but its uncertainty box overlaps the lane, so the overtake detour
# widens with how conservatively a method treats position uncertainty.
_SCRIPT_PRESETS = (
    (0.30, -7.9, 0.0, 2.0),
    (0.50, 3.8, 2.2, 0.0),
    (0.85, -7.4, 0.0, 1.9),
)


@dataclass(frozen=True)
class PedestrianScript:
    """One jaywalker: parked at (x, y) until the vehicle's along-path
    position comes within trigger_distance of the crossing anchor x, then
    walking at (vx, vy) indefinitely."""

    x: float
    y: float
    vx: float
    vy: float

    def initial_state(self) -> PedestrianState:
        return PedestrianState(self.x, self.y, 0.0, 0.0)

    def walking_state(self, ped: PedestrianState) -> PedestrianState:
        return PedestrianState(ped.x, ped.y, self.vx, self.vy)


def default_scripts(n: int, path_length: float) -> tuple:
    return tuple(
        PedestrianScript(x=frac * path_length, y=y, vx=vx, vy=vy)
        for frac, y, vx, vy in _SCRIPT_PRESETS[:n]
    )


@dataclass
class ScenarioConfig:
    method: str = "qt"
    seed: int = 0
    n_pedestrians: int = 3
    sigma_v: float = 0.1
    sigma_o: float = 5.0
    samples_p: int = 10
    samples_q: int = 10
    max_steps: int = 2500
    path_length: float = 120.0
    trigger_distance: float = 25.0
    collision_distance: float = 2.8
    ts: float = 0.02
    scripts: Optional[tuple] = None
    risk: RiskBudgetConfig = field(default_factory=RiskBudgetConfig)
    filter_cfg: FilterConfig = field(default_factory=FilterConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 <= self.n_pedestrians <= 3:
            raise ValueError("n_pedestrians must lie in 0..3")
        if self.sigma_v < 0 or self.sigma_o < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.samples_p < 1 or self.samples_q < 1:
            raise ValueError("sample counts must be at least 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.path_length <= 0 or self.trigger_distance <= 0:
            raise ValueError("path_length and trigger_distance must be positive")
        if self.collision_distance <= 0:
            raise ValueError("collision_distance must be positive")
        if self.ts <= 0 or not math.isfinite(self.ts):
            raise ValueError("ts must be positive")
        # one clock for plant, window, and MPC
        if self.risk.ts != self.ts or self.mpc.ts != self.ts:
            raise ValueError("risk.ts, mpc.ts and scenario ts must agree")
        if self.filter_cfg.bounds != self.mpc.bounds:
            raise ValueError("filter and MPC input bounds must agree")
        if self.scripts is None:
            self.scripts = default_scripts(self.n_pedestrians, self.path_length)
        else:
            self.scripts = tuple(self.scripts)
        if len(self.scripts) != self.n_pedestrians:
            raise ValueError("scripts must match n_pedestrians")

    @property
    def barrier(self) -> BarrierParams:
        return self.risk.barrier


def parse_config_text(text: str) -> dict:
    """Flat `key = value` lines into a raw string mapping."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"line {lineno}: empty key or value in {raw!r}")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


_TOP_INT = {"seed", "n_pedestrians", "samples_p", "samples_q", "max_steps"}
_TOP_FLOAT = {
    "sigma_v",
    "sigma_o",
    "path_length",
    "trigger_distance",
    "collision_distance",
    "ts",
}
_NESTED_FLOAT = {
    "risk.margin",
    "risk.nu_bar",
    "filter.rho_nu",
    "filter.epsilon",
    "bounds.v_min",
    "bounds.v_max",
    "bounds.omega_max",
    "mpc.w_pos",
    "mpc.w_head",
    "mpc.w_u",
    "mpc.w_du",
    "mpc.v_ref",
    "mpc.pp_lookahead",
    "barrier.kappa",
    "barrier.ds",
    "barrier.lookahead",
}
_NESTED_INT = {"risk.window", "risk.budget", "mpc.horizon"}
_PED_FIELDS = ("x", "y", "vx", "vy")


def _coerce(key: str, value):
    if isinstance(value, str):
        try:
            if key in _TOP_INT or key in _NESTED_INT:
                return int(value)
            return float(value)
        except ValueError:
            raise ValueError(f"config key {key!r}: cannot parse {value!r}") from None
    return value


def scenario_from_mapping(mapping: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from flat (possibly string-valued) keys.

    Values may be raw strings from a config file or already-typed Python
    values from CLI overrides; both coerce through the same schema.
    """
    data = dict(mapping)
    data.pop("runs", None)  # batch size is the runner's concern

    method = str(data.pop("method", "qt")).lower()
    top = {}
    for key in list(data):
        if key in _TOP_INT or key in _TOP_FLOAT:
            top[key] = _coerce(key, data.pop(key))

    nested = {}
    for key in list(data):
        if key in _NESTED_FLOAT or key in _NESTED_INT:
            nested[key] = _coerce(key, data.pop(key))

    ped_over = {}
    for key in list(data):
        parts = key.split(".")
        if len(parts) == 2 and parts[0].startswith("ped") and parts[1] in _PED_FIELDS:
            try:
                idx = int(parts[0][3:]) - 1
            except ValueError:
                raise ValueError(f"unknown config key {key!r}") from None
            if not 0 <= idx <= 2:
                raise ValueError(f"config key {key!r}: pedestrian index out of range")
            ped_over.setdefault(idx, {})[parts[1]] = float(_coerce(key, data.pop(key)))

    if data:
        raise ValueError(f"unknown config keys: {sorted(data)}")

    def pick(prefix, names):
        return {n: nested[f"{prefix}.{n}"] for n in names if f"{prefix}.{n}" in nested}

    barrier = BarrierParams(**pick("barrier", ("kappa", "ds", "lookahead")))
    bounds = InputBounds(**pick("bounds", ("v_min", "v_max", "omega_max")))
    ts = float(top.get("ts", 0.02))
    risk = RiskBudgetConfig(
        barrier=barrier, ts=ts, **pick("risk", ("window", "budget", "margin", "nu_bar"))
    )
    filter_cfg = FilterConfig(bounds=bounds, **pick("filter", ("rho_nu", "epsilon")))
    mpc = MpcConfig(
        bounds=bounds,
        ts=ts,
        **pick("mpc", ("horizon", "w_pos", "w_head", "w_u", "w_du", "v_ref", "pp_lookahead")),
    )

    cfg = ScenarioConfig(method=method, risk=risk, filter_cfg=filter_cfg, mpc=mpc, **top)
    if ped_over:
        scripts = list(cfg.scripts)
        for idx, fields in ped_over.items():
            if idx >= len(scripts):
                raise ValueError(f"ped{idx + 1} override but only {len(scripts)} pedestrians")
            scripts[idx] = replace(scripts[idx], **fields)
        cfg.scripts = tuple(scripts)
    return cfg
