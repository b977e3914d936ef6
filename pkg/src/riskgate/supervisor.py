"""Mode switching between the relaxed and the tail-risk safety filter.

A supervisor runs the relaxed barrier QP every tick as a probe, classifies
the tick through the sliding-window monitor, and decides which filter's
command to apply.  Two trigger rules are supported:

    feasibility-triggered:  mode = CVAR  iff  a_k = 0 and m_k >= M
    quality-triggered:      mode = CVAR  iff  m_k >= M

where m_k counts bad steps over the last W ticks and a_k flags whether the
probe's solution stayed inside the certified-risk set, i.e. the QP solved
and its slack satisfied nu_k <= nu_bar.  The probe's slack is deliberately
left uncapped: a close obstacle under tight input bounds then shows up as
nu_k > nu_bar (a_k = 0) rather than as a solver breakdown, and the same
quantity feeds the bad-step rule nu_k > nu_bar or r_min < delta.

The feasibility rule is a partial function of (a_k, m_k); the two
combinations it leaves open (infeasible below budget, feasible over budget)
resolve to the relaxed mode, so switching needs both degraded feasibility
and an exhausted budget.  Mode decisions are memoryless given (a_k, m_k),
the window itself provides the hysteresis.

On a CVAR tick the uncertainty scene is sampled lazily and the relaxed
tail-risk QP (shared slack capped at nu_bar) is solved; its command applies
the same tick.  If that QP is infeasible the probe's command applies
instead, and when the probe itself failed that command is already the
clipped nominal input, so the vehicle never goes uncommanded.
"""

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Callable, Optional, Sequence

from .dynamics import ControlInput, PedestrianState, VehicleState
from .filters import (
    MODE_RCBF,
    MODE_RCCBF,
    FilterConfig,
    FilterResult,
    StochasticScene,
    cvar_cbf_filter,
    rcbf_filter,
)
from .monitor import MonitorState, RiskBudgetConfig, classify_step, window_update

TRIGGER_FT = "ft"
TRIGGER_QT = "qt"


class FilterMode(IntEnum):
    RCBF = 0
    CVAR = 1


@dataclass
class SupervisorConfig:
    """Risk window plus the shared filter knobs.

    filter_cfg supplies rho_nu, epsilon and the input box; the supervisor
    forces the mode per solve and injects risk.nu_bar as the slack cap of
    the tail-risk QP, keeping the cap and the certificate in lockstep.
    """

    risk: RiskBudgetConfig = field(default_factory=RiskBudgetConfig)
    filter_cfg: FilterConfig = field(default_factory=FilterConfig)


@dataclass
class TickOutcome:
    """Everything one supervised control tick produced.

    result is the solve whose command was applied; probe is always the
    relaxed QP of this tick and cvar_result is None unless the tail-risk
    QP was attempted.  mode_selected records the trigger's decision,
    mode_used the filter actually applied (they differ when the tail-risk
    QP came back infeasible).
    """

    mode_selected: FilterMode
    mode_used: FilterMode
    result: FilterResult
    probe: FilterResult
    cvar_result: Optional[FilterResult]
    a_k: int
    b_k: int
    m_k: int
    u_applied: ControlInput


def ft_mode(a_k: int, m_k: int, budget: int) -> FilterMode:
    """Feasibility-triggered rule: switch only when the probe left the
    certified set and the window budget is spent."""
    if m_k < 0 or budget < 0:
        raise ValueError("m_k and budget must be nonnegative")
    return FilterMode.CVAR if (a_k == 0 and m_k >= budget) else FilterMode.RCBF


def qt_mode(m_k: int, budget: int) -> FilterMode:
    """Quality-triggered rule: every step is vetted, switch on the count alone."""
    if m_k < 0 or budget < 0:
        raise ValueError("m_k and budget must be nonnegative")
    return FilterMode.CVAR if m_k >= budget else FilterMode.RCBF


def supervise_tick(
    vehicle: VehicleState,
    pedestrians: Sequence[PedestrianState],
    u_nom: ControlInput,
    scene_sampler: Callable[[], StochasticScene],
    trigger: str,
    cfg: SupervisorConfig,
    monitor: MonitorState,
    rcbf_solver: Callable[..., FilterResult] = rcbf_filter,
    cvar_solver: Callable[..., FilterResult] = cvar_cbf_filter,
) -> tuple[TickOutcome, MonitorState]:
    """Run one supervised control tick; returns (outcome, advanced monitor).

    Order of operations: solve the relaxed probe on the measured states,
    classify b_k from the probe's (nu_k, r_min_k), slide the window, pick
    the mode from the updated count, then solve and apply the tail-risk QP
    only on CVAR ticks.  scene_sampler is called on those ticks alone, so
    the caller's random stream advances only when uncertainty is consumed.

    The solver arguments exist for tests to script probe outcomes; both
    must honour the FilterResult contract.
    """
    if trigger not in (TRIGGER_FT, TRIGGER_QT):
        raise ValueError(f"trigger must be {TRIGGER_FT!r} or {TRIGGER_QT!r}, got {trigger!r}")
    risk = cfg.risk
    if len(monitor.ring) != risk.window:
        raise ValueError("monitor ring length does not match the configured window")

    probe = rcbf_solver(u_nom, vehicle, pedestrians, replace(cfg.filter_cfg, mode=MODE_RCBF), risk.barrier)
    a_k = int(probe.feasible and probe.nu <= risk.nu_bar)
    b_k = classify_step(probe.nu, probe.r_min, risk)
    advanced = window_update(monitor, b_k)

    if trigger == TRIGGER_FT:
        selected = ft_mode(a_k, advanced.m, risk.budget)
    else:
        selected = qt_mode(advanced.m, risk.budget)

    applied, used, cvar_res = probe, FilterMode.RCBF, None
    if selected is FilterMode.CVAR:
        scene = scene_sampler()
        tail_cfg = replace(cfg.filter_cfg, mode=MODE_RCCBF, nu_bar=risk.nu_bar)
        cvar_res = cvar_solver(u_nom, scene, tail_cfg, risk.barrier)
        if cvar_res.feasible:
            applied, used = cvar_res, FilterMode.CVAR
        # infeasible tail QP: fall through to the probe's command, which is
        # the clipped nominal input when the probe failed as well

    outcome = TickOutcome(
        mode_selected=selected,
        mode_used=used,
        result=applied,
        probe=probe,
        cvar_result=cvar_res,
        a_k=a_k,
        b_k=b_k,
        m_k=advanced.m,
        u_applied=applied.u_safe,
    )
    return outcome, advanced
