"""Vehicle and pedestrian kinematics plus polyline reference paths.

The vehicle is a velocity-controlled unicycle: state (x, y, theta), input
u = (v, omega).  Between control ticks the input is held (ZOH), so the
continuous motion is an exact circular arc; `step_unicycle` integrates it in
closed form rather than with an Euler approximation.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {values}")


@dataclass
class VehicleState:
    """Planar pose. theta is stored normalized to (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        _require_finite("VehicleState", self.x, self.y, self.theta)
        self.theta = wrap_angle(self.theta)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass
class ControlInput:
    """Commanded forward speed v [m/s] and yaw rate omega [rad/s]."""

    v: float
    omega: float

    def __post_init__(self):
        _require_finite("ControlInput", self.v, self.omega)

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])


@dataclass
class InputBounds:
    """Admissible input box: v in [v_min, v_max], |omega| <= omega_max."""

    v_min: float = 0.0
    v_max: float = 8.0
    omega_max: float = 0.5

    def clip(self, u: ControlInput) -> ControlInput:
        v = min(max(u.v, self.v_min), self.v_max)
        w = min(max(u.omega, -self.omega_max), self.omega_max)
        return ControlInput(v, w)

    def lower(self) -> np.ndarray:
        return np.array([self.v_min, -self.omega_max])

    def upper(self) -> np.ndarray:
        return np.array([self.v_max, self.omega_max])


@dataclass
class PedestrianState:
    """Pedestrian position and constant planar velocity."""

    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        _require_finite("PedestrianState", self.x, self.y, self.vx, self.vy)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])


def _sinc(z: float) -> float:
    """sin(z)/z, stable near z = 0 (np.sinc uses the normalized convention)."""
    return float(np.sinc(z / np.pi))


def step_unicycle(state: VehicleState, u: ControlInput, ts: float) -> VehicleState:
    """Propagate the unicycle one interval under a held (v, omega) command.

    Uses the exact arc integral, written in the cancellation-free form
        dx = v*ts*sinc(omega*ts/2)*cos(theta + omega*ts/2)
        dy = v*ts*sinc(omega*ts/2)*sin(theta + omega*ts/2)
    which reduces continuously to the straight-line update as omega -> 0.
    """
    if ts <= 0.0 or not math.isfinite(ts):
        raise ValueError(f"ts must be positive and finite, got {ts}")
    half = 0.5 * u.omega * ts
    chord = u.v * ts * _sinc(half)
    return VehicleState(
        state.x + chord * math.cos(state.theta + half),
        state.y + chord * math.sin(state.theta + half),
        wrap_angle(state.theta + u.omega * ts),
    )


def step_pedestrian(ped: PedestrianState, ts: float) -> PedestrianState:
    """Constant-velocity pedestrian update."""
    if ts <= 0.0 or not math.isfinite(ts):
        raise ValueError(f"ts must be positive and finite, got {ts}")
    return PedestrianState(ped.x + ped.vx * ts, ped.y + ped.vy * ts, ped.vx, ped.vy)


@dataclass
class ReferencePath:
    """Piecewise-linear reference path with arclength parameterization."""

    waypoints: np.ndarray
    _seg_vecs: np.ndarray = field(init=False, repr=False)
    _seg_lens: np.ndarray = field(init=False, repr=False)
    _cum_len: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=float)
        if w.ndim != 2 or w.shape[1] != 2 or w.shape[0] < 2:
            raise ValueError(f"waypoints must have shape (N>=2, 2), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("waypoints must be finite")
        vecs = np.diff(w, axis=0)
        lens = np.linalg.norm(vecs, axis=1)
        if np.any(lens < 1e-12):
            raise ValueError("consecutive waypoints must be distinct")
        self.waypoints = w
        self._seg_vecs = vecs
        self._seg_lens = lens
        self._cum_len = np.concatenate([[0.0], np.cumsum(lens)])

    @classmethod
    def straight(cls, length: float, start=(0.0, 0.0), heading: float = 0.0) -> "ReferencePath":
        p0 = np.asarray(start, dtype=float)
        p1 = p0 + length * np.array([math.cos(heading), math.sin(heading)])
        return cls(np.vstack([p0, p1]))

    @classmethod
    def from_csv(cls, filename: str) -> "ReferencePath":
        """Load waypoints from a CSV file with an 'x,y' header row."""
        with open(filename, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{filename}: empty waypoint file") from None
            cols = [c.strip().lower() for c in header]
            if cols[:2] != ["x", "y"]:
                raise ValueError(f"{filename}: expected header 'x,y', got {header}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    raise ValueError(f"{filename}:{lineno}: malformed waypoint row {row}") from None
        if len(rows) < 2:
            raise ValueError(f"{filename}: need at least two waypoints")
        return cls(np.array(rows))

    @property
    def total_length(self) -> float:
        return float(self._cum_len[-1])

    def project(self, point) -> tuple[float, float, int]:
        """Project a point onto the path.

        Returns (arclength of nearest point, distance, segment index); ties
        between segments resolve to the lower index.
        """
        p = np.asarray(point, dtype=float)
        rel = p - self.waypoints[:-1]
        t = np.einsum("ij,ij->i", rel, self._seg_vecs) / self._seg_lens**2
        t = np.clip(t, 0.0, 1.0)
        nearest = self.waypoints[:-1] + t[:, None] * self._seg_vecs
        d = np.linalg.norm(p - nearest, axis=1)
        seg = int(np.argmin(d))
        s = self._cum_len[seg] + t[seg] * self._seg_lens[seg]
        return float(s), float(d[seg]), seg

    def point_at(self, s: float) -> np.ndarray:
        """Point at arclength s, clamped to [0, total_length]."""
        s = min(max(s, 0.0), self.total_length)
        seg = int(np.searchsorted(self._cum_len, s, side="right") - 1)
        seg = min(max(seg, 0), len(self._seg_lens) - 1)
        t = (s - self._cum_len[seg]) / self._seg_lens[seg]
        return self.waypoints[seg] + t * self._seg_vecs[seg]

    def heading_at(self, s: float) -> float:
        """Tangent heading of the segment containing arclength s."""
        s = min(max(s, 0.0), self.total_length)
        seg = int(np.searchsorted(self._cum_len, s, side="right") - 1)
        seg = min(max(seg, 0), len(self._seg_lens) - 1)
        v = self._seg_vecs[seg]
        return math.atan2(v[1], v[0])


def cross_track_error(path: ReferencePath, point) -> tuple[float, int]:
    """Unsigned distance from a point to the path polyline and the nearest segment."""
    _, d, seg = path.project(point)
    return d, seg
