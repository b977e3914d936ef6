"""Distance control-barrier function for vehicle/pedestrian pairs.

The safe set is h >= 0 with h = ||p_c - p_o||_2 - D_s, where p_o is the
pedestrian position and p_c = p + d*(cos theta, sin theta) is a look-ahead
point rigidly attached ahead of the vehicle.  Differentiating h along the
unicycle flow gives

    hdot = n' * (pdot_c - pdot_o),
    pdot_c = (v cos theta - d w sin theta, v sin theta + d w cos theta),

with n = (p_c - p_o)/||p_c - p_o||, so hdot is affine in u = (v, w); the
plain vehicle point (d = 0) would make hdot independent of w.  The barrier
residual is

    r(x, u) = hdot + kappa*h = g' u + q,

and a command is safe when r >= 0.  The matching discrete one-step comparison
under a zero-order hold of length ts is

    h_next >= mu*h + c*inf_interval(r),   mu = exp(-kappa*ts),  c = (1-mu)/kappa.
"""

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlInput, PedestrianState, VehicleState

# Residual assigned to a degenerate pair (obstacle on top of the look-ahead
# point): constant, direction-free, and bad enough to dominate any real row.
DEGENERATE_DISTANCE = 1e-6
DEGENERATE_RESIDUAL = -1e3


@dataclass
class BarrierParams:
    """kappa: class-K gain, ds: safety distance [m], lookahead: offset d [m]."""

    kappa: float = 1.0
    ds: float = 3.0
    lookahead: float = 0.5

    def __post_init__(self):
        if self.kappa <= 0.0 or not math.isfinite(self.kappa):
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.ds < 0.0 or self.lookahead < 0.0:
            raise ValueError("ds and lookahead must be nonnegative")


@dataclass
class SamplePair:
    """One sampled vehicle position paired with one sampled obstacle position."""

    veh: np.ndarray
    obs: np.ndarray


def derive_discrete(kappa: float, ts: float) -> tuple[float, float]:
    """ZOH constants (mu, c) of the discrete comparison h+ >= mu*h + c*r."""
    if kappa <= 0.0 or ts <= 0.0:
        raise ValueError("kappa and ts must be positive")
    mu = math.exp(-kappa * ts)
    c = (1.0 - mu) / kappa
    return mu, c


def lookahead_point(state: VehicleState, lookahead: float) -> np.ndarray:
    return np.array(
        [state.x + lookahead * math.cos(state.theta), state.y + lookahead * math.sin(state.theta)]
    )


def residual_coefficients(theta: float, pc, po, obs_vel, params: BarrierParams):
    """Affine residual coefficients r(u) = g @ u + q for look-ahead points pc
    against obstacle points po (both broadcastable to (..., 2)).

    Degenerate pairs (distance below 1e-6) get g = 0, q = DEGENERATE_RESIDUAL.
    Returns (g, q, h) with shapes (..., 2), (...,), (...,).
    """
    pc = np.asarray(pc, dtype=float)
    po = np.asarray(po, dtype=float)
    obs_vel = np.asarray(obs_vel, dtype=float)
    diff = pc - po
    dist = np.linalg.norm(diff, axis=-1)
    ok = dist >= DEGENERATE_DISTANCE
    safe_dist = np.where(ok, dist, 1.0)
    n = diff / safe_dist[..., None]
    h = dist - params.ds
    ct, st = math.cos(theta), math.sin(theta)
    g_v = n[..., 0] * ct + n[..., 1] * st
    g_w = params.lookahead * (-n[..., 0] * st + n[..., 1] * ct)
    q = params.kappa * h - np.einsum("...i,i->...", n, obs_vel)
    g = np.stack([np.where(ok, g_v, 0.0), np.where(ok, g_w, 0.0)], axis=-1)
    q = np.where(ok, q, DEGENERATE_RESIDUAL)
    return g, q, h


def barrier_value(veh: VehicleState, obs: PedestrianState, params: BarrierParams) -> float:
    """h = distance from the look-ahead point to the obstacle minus ds."""
    pc = lookahead_point(veh, params.lookahead)
    return float(np.linalg.norm(pc - obs.position) - params.ds)


def residual(
    veh: VehicleState, obs: PedestrianState, u: ControlInput, params: BarrierParams
) -> float:
    """r(x, u) = hdot + kappa*h evaluated at one vehicle/pedestrian pair."""
    pc = lookahead_point(veh, params.lookahead)
    g, q, _ = residual_coefficients(veh.theta, pc, obs.position, obs.velocity, params)
    return float(g @ u.as_array() + q)


def loss(r) -> float:
    """Barrier loss Z = -r; positive values mean the residual constraint fails."""
    return -r


def one_step_bound(h: float, r: float, mu: float, c: float) -> float:
    """Guaranteed lower bound on h after one held step: mu*h + c*r."""
    return mu * h + c * r
