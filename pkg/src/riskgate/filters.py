"""Barrier-QP safety filters: relaxed (R-CBF) and CVaR-tightened variants.

All filters minimally modify a nominal command,

    min_{u in U, nu}  0.5*||u - u_nom||^2 + rho_nu * nu^2,

subject to barrier residual constraints.  The relaxed filter enforces
r_j(u) >= -nu per measured pedestrian with one nonnegative slack nu.  The
CVaR filters replace each pedestrian's measured constraint with a tail
constraint over S = P*Q sampled vehicle/obstacle pairs,

    CVaR_eps(Z_i(u)) <= nu,    Z_i(u) = -r_i(u),

embedded exactly through the Rockafellar-Uryasev epigraph form with an
auxiliary threshold gamma_j and tail excesses t_ji >= 0 per pedestrian j:

    gamma_j + (1/((1-eps)S)) sum_i t_ji <= nu,
    t_ji >= Z_ji(u) - gamma_j,   t_ji >= 0.

The relaxed variant additionally keeps every sampled residual above the
shared slack, r_ji(u) >= -nu, and caps the slack at 0 <= nu <= nu_bar, so nu
budgets the worst sampled pair, not only the tail statistic.  The hard
variant pins nu = 0 and enforces the tail constraint alone; keeping the
per-pair rows there would reduce every confidence level to the worst-case
filter and void the adaptive ladder, whose entries must tighten or relax the
feasible set.
"""

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .barrier import BarrierParams, SamplePair, residual_coefficients
from .dynamics import ControlInput, InputBounds, PedestrianState, VehicleState
from .qp import OPTIMAL, QpProblem, solve

MODE_RCBF = "rcbf"
MODE_CCBF_HARD = "ccbf_hard"
MODE_ACCBF = "accbf"
MODE_RCCBF = "rccbf"
_MODES = (MODE_RCBF, MODE_CCBF_HARD, MODE_ACCBF, MODE_RCCBF)

# Tail risk levels alpha for the adaptive ladder, most conservative first;
# the effective CVaR confidence of an entry is eps = 1 - alpha.
DEFAULT_EPSILON_LADDER = (0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.40, 0.50)


@dataclass
class FilterConfig:
    """Shared filter knobs.

    nu_bar caps the relaxed slack; the closed-loop harness sets it from the
    risk monitor's window budget, the bare default leaves it uncapped.
    """

    rho_nu: float = 50.0
    epsilon: float = 0.95
    nu_bar: float = math.inf
    mode: str = MODE_RCBF
    epsilon_ladder: Sequence[float] = DEFAULT_EPSILON_LADDER
    bounds: InputBounds = field(default_factory=InputBounds)

    def __post_init__(self):
        if self.rho_nu <= 0:
            raise ValueError("rho_nu must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        ladder = tuple(self.epsilon_ladder)
        if not ladder:
            raise ValueError("epsilon_ladder must be nonempty")
        if any(not 0.0 < e < 1.0 for e in ladder):
            raise ValueError("ladder entries must lie in (0, 1)")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("epsilon_ladder must be strictly increasing")
        self.epsilon_ladder = ladder
        if self.nu_bar < 0:
            raise ValueError("nu_bar must be nonnegative")


@dataclass
class StochasticScene:
    """Sampled uncertainty snapshot for one control tick.

    vehicle_samples: (Q, 2) vehicle position samples around the measurement,
    shared by every pedestrian; obstacle_samples: one (P, 2) array per
    pedestrian; obstacle_vels: (n_ped, 2) measured velocities.  Pair i of a
    pedestrian couples obstacle sample p = i // Q with vehicle sample
    q = i mod Q, giving S = P*Q pairs.
    """

    theta: float
    vehicle_samples: np.ndarray
    obstacle_samples: list
    obstacle_vels: np.ndarray

    @property
    def n_pedestrians(self) -> int:
        return len(self.obstacle_samples)

    @property
    def n_pairs(self) -> int:
        if not self.obstacle_samples:
            return 0
        return self.obstacle_samples[0].shape[0] * self.vehicle_samples.shape[0]

    def pairs(self, j: int) -> list:
        """Materialized (vehicle, obstacle) sample pairs of pedestrian j."""
        out = []
        for p in range(self.obstacle_samples[j].shape[0]):
            for q in range(self.vehicle_samples.shape[0]):
                out.append(SamplePair(self.vehicle_samples[q], self.obstacle_samples[j][p]))
        return out


@dataclass
class FilterResult:
    """Outcome of one safety-filter solve.

    nu is the slack actually used; on an infeasible solve it reports the
    slack the applied fallback command would have needed.  cvar is the
    QP-certified tail bound gamma + coef*sum(t); it upper-bounds the
    empirical CVaR of the realized losses and matches it exactly when the
    tail constraint is active.  solve_time is wall time in milliseconds.
    """

    u_safe: ControlInput
    nu: float
    feasible: bool
    r_min: float
    objective: float = 0.0
    gamma: Optional[float] = None
    epsilon_used: Optional[float] = None
    cvar: Optional[float] = None
    solve_time: float = 0.0
    qp_status: str = ""


def cvar_estimate(losses, epsilon: float) -> tuple[float, float]:
    """Empirical CVaR via the Rockafellar-Uryasev minimization.

    Returns (cvar, gamma_star) where gamma_star is the smallest minimizer of
    phi(gamma) = gamma + E[(Z - gamma)_+]/(1 - eps); on the empirical measure
    that is the eps-quantile of the losses.
    """
    z = np.sort(np.asarray(losses, dtype=float))
    if z.size == 0:
        raise ValueError("losses must be nonempty")
    if not np.all(np.isfinite(z)):
        raise ValueError("losses must be finite")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    s = z.size
    coef = 1.0 / ((1.0 - epsilon) * s)
    # The objective is piecewise linear and convex, so it attains its minimum
    # at a sample; tail sums give sum_i (z_i - gamma)_+ at every breakpoint.
    tail_sum = np.cumsum(z[::-1])[::-1] - z
    count = np.arange(s - 1, -1, -1)
    phi = z + coef * (tail_sum - count * z)
    j = int(np.argmin(phi))
    return float(phi[j]), float(z[j])


def _objective(u: ControlInput, u_nom: ControlInput, nu: float, rho_nu: float) -> float:
    return 0.5 * ((u.v - u_nom.v) ** 2 + (u.omega - u_nom.omega) ** 2) + rho_nu * nu * nu


def _fallback(u_nom, cfg, g_all, q_all, started, status) -> FilterResult:
    """Clipped nominal command plus the slack it would actually need."""
    u = cfg.bounds.clip(u_nom)
    if g_all is not None and len(q_all):
        r = g_all @ u.as_array() + q_all
        r_min = float(r.min())
    else:
        r_min = math.inf
    nu = max(0.0, -r_min) if math.isfinite(r_min) else 0.0
    return FilterResult(
        u_safe=u,
        nu=nu,
        feasible=False,
        r_min=r_min,
        objective=_objective(u, u_nom, nu, cfg.rho_nu),
        solve_time=(time.perf_counter() - started) * 1e3,
        qp_status=status,
    )


def rcbf_filter(
    u_nom: ControlInput,
    veh: VehicleState,
    pedestrians: Sequence[PedestrianState],
    cfg: FilterConfig,
    params: BarrierParams,
) -> FilterResult:
    """Relaxed barrier QP on raw measured states, one residual row per pedestrian."""
    started = time.perf_counter()
    bounds = cfg.bounds
    pc = np.array(
        [veh.x + params.lookahead * math.cos(veh.theta), veh.y + params.lookahead * math.sin(veh.theta)]
    )
    if pedestrians:
        gs = np.empty((len(pedestrians), 2))
        qs = np.empty(len(pedestrians))
        for j, ped in enumerate(pedestrians):
            g, q, _ = residual_coefficients(veh.theta, pc, ped.position, ped.velocity, params)
            gs[j] = g
            qs[j] = q
    else:
        gs = np.zeros((0, 2))
        qs = np.zeros(0)

    # Variables (v, w, nu); rows -g'u - nu <= q encode r_j(u) >= -nu.
    h_mat = np.diag([1.0, 1.0, 2.0 * cfg.rho_nu])
    f_vec = np.array([-u_nom.v, -u_nom.omega, 0.0])
    a_mat = np.concatenate([-gs, -np.ones((len(qs), 1))], axis=1) if len(qs) else None
    lb = np.array([bounds.v_min, -bounds.omega_max, 0.0])
    ub = np.array([bounds.v_max, bounds.omega_max, np.inf])
    sol = solve(QpProblem(h_mat, f_vec, a_mat, qs if len(qs) else None, lb, ub))
    if sol.status != OPTIMAL:
        return _fallback(u_nom, cfg, gs, qs, started, sol.status)
    u_safe = ControlInput(float(sol.x[0]), float(sol.x[1]))
    nu = max(0.0, float(sol.x[2]))
    r = gs @ sol.x[:2] + qs if len(qs) else np.array([math.inf])
    return FilterResult(
        u_safe=u_safe,
        nu=nu,
        feasible=True,
        r_min=float(r.min()),
        objective=_objective(u_safe, u_nom, nu, cfg.rho_nu),
        solve_time=(time.perf_counter() - started) * 1e3,
        qp_status=sol.status,
    )


def assemble_stochastic_residuals(scene: StochasticScene, params: BarrierParams):
    """Per-pedestrian affine residual coefficients over all S sampled pairs.

    Returns a list of (G, q) with r_i(u) = G[i] @ u + q[i], pairs ordered so
    that i = p * Q + q_idx.
    """
    q_count = scene.vehicle_samples.shape[0]
    ct, st = math.cos(scene.theta), math.sin(scene.theta)
    pc = scene.vehicle_samples + params.lookahead * np.array([ct, st])
    out = []
    for j, obs in enumerate(scene.obstacle_samples):
        p_count = obs.shape[0]
        pc_pairs = np.tile(pc, (p_count, 1))
        po_pairs = np.repeat(obs, q_count, axis=0)
        g, q, _ = residual_coefficients(scene.theta, pc_pairs, po_pairs, scene.obstacle_vels[j], params)
        out.append((g, q))
    return out


def cvar_cbf_filter(
    u_nom: ControlInput,
    scene: StochasticScene,
    cfg: FilterConfig,
    params: BarrierParams,
    hard: Optional[bool] = None,
) -> FilterResult:
    """CVaR-tightened barrier QP over sampled pairs (epigraph form).

    hard=True pins the slack to zero and enforces the tail constraint alone;
    relaxed mode shares one slack nu in [0, nu_bar] between the tail rows and
    every sampled residual.  When hard is None the mode comes from cfg.mode.
    """
    started = time.perf_counter()
    if hard is None:
        hard = cfg.mode == MODE_CCBF_HARD
    bounds = cfg.bounds
    blocks = assemble_stochastic_residuals(scene, params)
    n_ped = len(blocks)
    if n_ped == 0:
        # No obstacles: box projection of the nominal command, zero slack.
        u = bounds.clip(u_nom)
        return FilterResult(
            u_safe=u,
            nu=0.0,
            feasible=True,
            r_min=math.inf,
            objective=_objective(u, u_nom, 0.0, cfg.rho_nu),
            cvar=0.0,
            solve_time=(time.perf_counter() - started) * 1e3,
            qp_status=OPTIMAL,
        )

    s_pairs = blocks[0][1].shape[0]
    coef = 1.0 / ((1.0 - cfg.epsilon) * s_pairs)
    n = 3 + n_ped * (1 + s_pairs)
    rows_per_ped = 1 + s_pairs + (0 if hard else s_pairs)
    n_rows = n_ped * rows_per_ped

    h_mat = np.zeros((n, n))
    h_mat[0, 0] = h_mat[1, 1] = 1.0
    h_mat[2, 2] = 2.0 * cfg.rho_nu
    f_vec = np.zeros(n)
    f_vec[0], f_vec[1] = -u_nom.v, -u_nom.omega

    a_mat = np.zeros((n_rows, n))
    b_vec = np.zeros(n_rows)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[:3] = [bounds.v_min, -bounds.omega_max, 0.0]
    ub[:3] = [bounds.v_max, bounds.omega_max, 0.0 if hard else cfg.nu_bar]

    row = 0
    g_parts = []
    q_parts = []
    for j, (g, q) in enumerate(blocks):
        base = 3 + j * (1 + s_pairs)
        gamma_col = base
        t_cols = np.arange(base + 1, base + 1 + s_pairs)
        lb[t_cols] = 0.0
        # gamma_j + coef * sum_i t_ji - nu <= 0
        a_mat[row, gamma_col] = 1.0
        a_mat[row, t_cols] = coef
        a_mat[row, 2] = -1.0
        row += 1
        # epigraph of the loss: -g'u - gamma_j - t_ji <= q_i
        sl = slice(row, row + s_pairs)
        a_mat[sl, :2] = -g
        a_mat[sl, gamma_col] = -1.0
        a_mat[np.arange(row, row + s_pairs), t_cols] = -1.0
        b_vec[sl] = q
        row += s_pairs
        if not hard:
            # every sampled residual stays above the shared slack
            sl = slice(row, row + s_pairs)
            a_mat[sl, :2] = -g
            a_mat[sl, 2] = -1.0
            b_vec[sl] = q
            row += s_pairs
        g_parts.append(g)
        q_parts.append(q)
    g_all = np.concatenate(g_parts)
    q_all = np.concatenate(q_parts)

    sol = solve(QpProblem(h_mat, f_vec, a_mat, b_vec, lb, ub), max_iter=max(500, 25 * n))
    if sol.status != OPTIMAL:
        return _fallback(u_nom, cfg, g_all, q_all, started, sol.status)

    u_safe = ControlInput(float(sol.x[0]), float(sol.x[1]))
    nu = 0.0 if hard else max(0.0, float(sol.x[2]))
    r_all = g_all @ sol.x[:2] + q_all
    gammas = np.empty(n_ped)
    cvars = np.empty(n_ped)
    for j in range(n_ped):
        base = 3 + j * (1 + s_pairs)
        gammas[j] = sol.x[base]
        cvars[j] = sol.x[base] + coef * sol.x[base + 1 : base + 1 + s_pairs].sum()
    return FilterResult(
        u_safe=u_safe,
        nu=nu,
        feasible=True,
        r_min=float(r_all.min()),
        objective=_objective(u_safe, u_nom, nu, cfg.rho_nu),
        gamma=float(gammas.max()),
        cvar=float(cvars.max()),
        solve_time=(time.perf_counter() - started) * 1e3,
        qp_status=sol.status,
    )


def adaptive_cvar_filter(
    u_nom: ControlInput,
    scene: StochasticScene,
    cfg: FilterConfig,
    params: BarrierParams,
) -> FilterResult:
    """Hard CVaR filter swept over the risk-level ladder.

    Ladder entries are tail risk levels alpha (effective confidence
    eps = 1 - alpha) tried in listed order, i.e. most conservative first;
    the first feasible hard solve wins and epsilon_used records its entry.
    """
    started = time.perf_counter()
    res = None
    for alpha in cfg.epsilon_ladder:
        res = cvar_cbf_filter(u_nom, scene, replace(cfg, epsilon=1.0 - alpha), params, hard=True)
        if res.feasible:
            res.epsilon_used = alpha
            break
    res.solve_time = (time.perf_counter() - started) * 1e3
    return res
