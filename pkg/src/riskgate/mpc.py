"""Path-tracking model predictive controller producing the nominal command.

Linear time-varying MPC about the reference-projected trajectory: the
current pose is projected onto the path at arclength s0, reference poses
are taken at s_k = s0 + v_ref*Ts*k, and the unicycle is linearized around
them with u_ref = (v_ref, 0).  In deviation coordinates e = (dx, dy, dth),
du = u - u_ref the prediction is

    e_{k+1} = A_k e_k + B_k du_k + d_k
    A_k = [[1, 0, -Ts*v_ref*sin th_k], [0, 1, Ts*v_ref*cos th_k], [0, 0, 1]]
    B_k = [[Ts*cos th_k, 0], [Ts*sin th_k, 0], [0, Ts]]

where th_k is the reference heading and d_k is the exact affine drift
f(ref_k, u_ref) - ref_{k+1}; it vanishes on straight segments and keeps the
prediction consistent across polyline corners and the clamped path end.

Cost over the horizon: sum of w_pos*|dp_k|^2 + w_head*dth_k^2 for k = 1..H
plus w_u*|du_k|^2 and intra-horizon w_du*|du_k - du_{k-1}|^2.  The input
penalty is on the deviation from u_ref, so an on-path pose at reference
heading has the exact minimizer u = (v_ref, 0); rate coupling to the
previously applied command is deliberately absent, keeping the controller a
pure function of (state, path, cfg).  Inputs carry box constraints; the
condensed problem is a small box QP.  If the QP solver ever fails, a
pure-pursuit command toward a fixed look-ahead point is returned and
flagged, so the loop never runs open.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import ControlInput, InputBounds, ReferencePath, VehicleState, wrap_angle
from .qp import OPTIMAL, QpProblem, solve


@dataclass
class MpcConfig:
    """Horizon, tracking weights, and the admissible input box."""

    horizon: int = 10
    w_pos: float = 1.0
    w_head: float = 0.5
    w_u: float = 0.01
    w_du: float = 0.1
    ts: float = 0.02
    v_ref: float = 5.0
    pp_lookahead: float = 3.0
    bounds: InputBounds = field(default_factory=InputBounds)

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        self.horizon = int(self.horizon)
        weights = (self.w_pos, self.w_head, self.w_u, self.w_du)
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise ValueError("weights must be finite and nonnegative")
        if all(w == 0 for w in weights):
            raise ValueError("at least one weight must be positive")
        if self.ts <= 0 or not math.isfinite(self.ts):
            raise ValueError("ts must be positive")
        if self.v_ref < 0 or not math.isfinite(self.v_ref):
            raise ValueError("v_ref must be nonnegative")
        if self.pp_lookahead <= 0:
            raise ValueError("pp_lookahead must be positive")


@dataclass
class MpcPlan:
    """First command plus the whole solved input sequence (H, 2)."""

    u0: ControlInput
    inputs: np.ndarray
    fallback: bool
    qp_status: str


def pure_pursuit(state: VehicleState, path: ReferencePath, cfg: MpcConfig) -> ControlInput:
    """Geometric steering toward the point pp_lookahead ahead of the
    projection, at reference speed; the QP-failure fallback."""
    s0, _, _ = path.project((state.x, state.y))
    target = path.point_at(s0 + cfg.pp_lookahead)
    dx, dy = target[0] - state.x, target[1] - state.y
    dist = math.hypot(dx, dy)
    if dist < 1e-9:
        return cfg.bounds.clip(ControlInput(cfg.v_ref, 0.0))
    alpha = wrap_angle(math.atan2(dy, dx) - state.theta)
    omega = 2.0 * cfg.v_ref * math.sin(alpha) / dist
    return cfg.bounds.clip(ControlInput(cfg.v_ref, omega))


def _reference_rollout(path: ReferencePath, s0: float, cfg: MpcConfig):
    s = s0 + cfg.v_ref * cfg.ts * np.arange(cfg.horizon + 1)
    pts = np.array([path.point_at(si) for si in s])
    heads = np.array([path.heading_at(si) for si in s])
    return pts, heads


def mpc_plan(state: VehicleState, path: ReferencePath, cfg: MpcConfig) -> MpcPlan:
    """Condense the LTV prediction and solve the box QP; returns the plan."""
    h_steps, ts, v_ref = cfg.horizon, cfg.ts, cfg.v_ref
    s0, _, _ = path.project((state.x, state.y))
    pts, heads = _reference_rollout(path, s0, cfg)

    e0 = np.array(
        [state.x - pts[0, 0], state.y - pts[0, 1], wrap_angle(state.theta - heads[0])]
    )

    # Stacked prediction E = F e0 + G dU + W over e_1..e_H.
    n_x, n_u = 3 * h_steps, 2 * h_steps
    f_pred = np.zeros((n_x, 3))
    g_pred = np.zeros((n_x, n_u))
    w_pred = np.zeros(n_x)
    phi = np.eye(3)
    drift = np.zeros(3)
    for k in range(h_steps):
        th = heads[k]
        a_k = np.array([[1.0, 0.0, -ts * v_ref * math.sin(th)],
                        [0.0, 1.0, ts * v_ref * math.cos(th)],
                        [0.0, 0.0, 1.0]])
        b_k = np.array([[ts * math.cos(th), 0.0], [ts * math.sin(th), 0.0], [0.0, ts]])
        d_k = np.array(
            [
                pts[k, 0] + ts * v_ref * math.cos(th) - pts[k + 1, 0],
                pts[k, 1] + ts * v_ref * math.sin(th) - pts[k + 1, 1],
                wrap_angle(heads[k] - heads[k + 1]),
            ]
        )
        rows = slice(3 * k, 3 * k + 3)
        if k:
            prev = slice(3 * (k - 1), 3 * k)
            g_pred[rows] = a_k @ g_pred[prev]
        g_pred[rows, 2 * k : 2 * k + 2] = b_k
        phi = a_k @ phi
        drift = a_k @ drift + d_k
        f_pred[rows] = phi
        w_pred[rows] = drift

    q_diag = np.tile([cfg.w_pos, cfg.w_pos, cfg.w_head], h_steps)
    h_qp = 2.0 * (g_pred.T * q_diag) @ g_pred + 2.0 * cfg.w_u * np.eye(n_u)
    if cfg.w_du > 0 and h_steps > 1:
        diff = np.zeros((2 * (h_steps - 1), n_u))
        idx = np.arange(2 * (h_steps - 1))
        diff[idx, idx + 2] = 1.0
        diff[idx, idx] = -1.0
        h_qp += 2.0 * cfg.w_du * diff.T @ diff
    c_free = f_pred @ e0 + w_pred
    f_qp = 2.0 * g_pred.T @ (q_diag * c_free)

    lb = np.tile([cfg.bounds.v_min - v_ref, -cfg.bounds.omega_max], h_steps)
    ub = np.tile([cfg.bounds.v_max - v_ref, cfg.bounds.omega_max], h_steps)
    sol = solve(QpProblem(h_qp, f_qp, None, None, lb, ub), max_iter=max(200, 20 * n_u))
    if sol.status != OPTIMAL:
        u_pp = pure_pursuit(state, path, cfg)
        inputs = np.tile([u_pp.v, u_pp.omega], (h_steps, 1))
        return MpcPlan(u0=u_pp, inputs=inputs, fallback=True, qp_status=sol.status)

    du = sol.x.reshape(h_steps, 2)
    inputs = du + np.array([v_ref, 0.0])
    u0 = cfg.bounds.clip(ControlInput(float(inputs[0, 0]), float(inputs[0, 1])))
    return MpcPlan(u0=u0, inputs=inputs, fallback=False, qp_status=sol.status)


def mpc_nominal(state: VehicleState, path: ReferencePath, cfg: Optional[MpcConfig] = None) -> ControlInput:
    """First input of the receding-horizon tracking plan."""
    return mpc_plan(state, path, cfg if cfg is not None else MpcConfig()).u0
