"""Kinematic bicycle model: action rollout, action inference, feasibility.

The reference point is the rear axle. Integration is forward Euler::

    x     += v cos(theta) dt
    y     += v sin(theta) dt
    theta += v / wheelbase * tan(steer) dt
    v     += accel dt

Speeds may be negative (reversing). :func:`rollout_batch` accepts either
numpy arrays or :class:`~starcast.nn.Tensor` actions; in the latter case the
result is differentiable with respect to the actions.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, normalize_heading
from .nn import tensor as T
from .nn.tensor import Tensor

log = logging.getLogger(__name__)

# Number of action components clamped to their bounds, keyed by component.
CLAMP_EVENTS: Counter = Counter()


class TooFewPoints(ValueError):
    pass


class NonFiniteState(ValueError):
    pass


@dataclass(frozen=True)
class KinematicParams:
    wheelbase: float = 2.7
    dt: float = 0.1
    steer_max: float = math.pi / 4
    accel_max: float = 10.0
    v_eps: float = 0.1

    def __post_init__(self):
        if self.wheelbase <= 0 or self.dt <= 0:
            raise ValueError("wheelbase and dt must be positive")
        if not 0 < self.steer_max < math.pi / 2:
            raise ValueError("steer_max must lie in (0, pi/2)")
        if self.accel_max <= 0 or self.v_eps <= 0:
            raise ValueError("accel_max and v_eps must be positive")

    @property
    def max_curvature(self):
        return math.tan(self.steer_max) / self.wheelbase


@dataclass(frozen=True)
class BicycleState:
    pose: Pose
    speed: float

    def __post_init__(self):
        if not math.isfinite(self.speed):
            raise NonFiniteState("speed must be finite")

    @classmethod
    def make(cls, x, y, heading, speed):
        return cls(Pose(float(x), float(y), float(heading)), float(speed))

    def as_array(self):
        return np.array([self.pose.x, self.pose.y, self.pose.heading, self.speed])


@dataclass
class ActionSequence:
    accel: np.ndarray
    steer: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.accel = np.asarray(self.accel, dtype=float)
        self.steer = np.asarray(self.steer, dtype=float)
        if self.valid is None:
            self.valid = np.ones(len(self.accel), dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.accel.shape == self.steer.shape == self.valid.shape) or self.accel.ndim != 1:
            raise ValueError("accel, steer and valid must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.accel)) and np.all(np.isfinite(self.steer))):
            raise ValueError("actions must be finite")

    def __len__(self):
        return len(self.accel)

    def as_matrix(self):
        """3 x T matrix of (accel, steer, valid) rows."""
        return np.stack([self.accel, self.steer, self.valid.astype(float)])


def _clamp(values, bound, what):
    if isinstance(values, Tensor):
        over = np.abs(values.data) > bound
        if over.any():
            CLAMP_EVENTS[what] += int(over.sum())
            return T.where(over, np.sign(values.data) * bound, values)
        return values
    arr = np.asarray(values, dtype=float)
    over = np.abs(arr) > bound
    if over.any():
        CLAMP_EVENTS[what] += int(over.sum())
        log.debug("clamped %d %s values to +/-%g", over.sum(), what, bound)
        arr = np.clip(arr, -bound, bound)
    return arr


def step(state: BicycleState, accel, steer, p: KinematicParams) -> BicycleState:
    """Advance one Euler step; out-of-range actions are clamped and counted."""
    a = float(_clamp(accel, p.accel_max, "accel"))
    d = float(_clamp(steer, p.steer_max, "steer"))
    x, y, th, v = state.as_array()
    nx = x + v * math.cos(th) * p.dt
    ny = y + v * math.sin(th) * p.dt
    nth = th + v / p.wheelbase * math.tan(d) * p.dt
    nv = v + a * p.dt
    if not all(map(math.isfinite, (nx, ny, nth, nv))):
        raise NonFiniteState("bicycle state became non-finite")
    return BicycleState.make(nx, ny, nth, nv)


def _wrap_tensor(theta):
    shift = np.round(theta.data / (2 * math.pi)) * (2 * math.pi)
    return theta - shift


def rollout_batch(x0, y0, theta0, v0, accel, steer, p: KinematicParams):
    """Roll out B action sequences of length T from B initial states.

    ``x0 .. v0`` have shape (B,); ``accel``/``steer`` (B, T) arrays or tensors.
    Returns positions (B, T, 2) of the T successive states, excluding the
    initial position.
    """
    is_tensor = isinstance(accel, Tensor) or isinstance(steer, Tensor)
    if is_tensor:
        dtype = (accel if isinstance(accel, Tensor) else steer).dtype
        accel, steer = T.as_tensor(accel, dtype), T.as_tensor(steer, dtype)
        cos, sin, tan = T.cos, T.sin, T.tan
        x, y, th, v = (T.Tensor(np.asarray(s, dtype=dtype)) for s in (x0, y0, theta0, v0))
    else:
        accel = np.asarray(accel, dtype=float)
        steer = np.asarray(steer, dtype=float)
        cos, sin, tan = np.cos, np.sin, np.tan
        x, y, th, v = (np.asarray(s, dtype=float) for s in (x0, y0, theta0, v0))
    accel = _clamp(accel, p.accel_max, "accel")
    steer = _clamp(steer, p.steer_max, "steer")
    horizon = accel.shape[1]
    tan_steer = tan(steer)
    xs, ys = [], []
    for t in range(horizon):
        x = x + v * cos(th) * p.dt
        y = y + v * sin(th) * p.dt
        th = th + v * tan_steer[:, t] * (p.dt / p.wheelbase)
        th = _wrap_tensor(th) if is_tensor else normalize_heading(th)
        v = v + accel[:, t] * p.dt
        xs.append(x)
        ys.append(y)
    if is_tensor:
        return T.stack([T.stack(xs, axis=1), T.stack(ys, axis=1)], axis=2)
    out = np.stack([np.stack(xs, axis=1), np.stack(ys, axis=1)], axis=2)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("rollout produced non-finite positions")
    return out


def rollout(s0: BicycleState, actions: ActionSequence, p: KinematicParams):
    """Positions (T, 2) of the states following ``s0`` under ``actions``."""
    x, y, th, v = s0.as_array()
    out = rollout_batch(
        np.array([x]), np.array([y]), np.array([th]), np.array([v]),
        actions.accel[None, :], actions.steer[None, :], p,
    )
    return out[0]


def infer_states(points, valid, p: KinematicParams):
    """Per-step (heading, signed speed) implied by consecutive track points.

    Entry ``t`` describes the motion from point ``t`` to ``t + 1``; the last
    entry and any entry touching padding are NaN. The vehicle is assumed to
    drive forwards at its first moving step; a later displacement pointing
    backwards relative to the current heading flips the speed sign instead of
    the heading, so reversing manoeuvres keep a continuous orientation.
    """
    pts = np.asarray(points, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    n = len(pts)
    heading = np.full(n, np.nan)
    speed = np.full(n, np.nan)
    idx = np.flatnonzero(valid)
    if len(idx) < 2:
        return heading, speed
    first = int(idx[0])
    disp = pts[first + 1 :] - pts[first:-1]
    dist = np.hypot(disp[:, 0], disp[:, 1])
    moving = dist > 1e-9
    current = None
    for k in range(len(disp)):
        t = first + k
        if moving[k]:
            direction = math.atan2(disp[k, 1], disp[k, 0])
            if current is None or math.cos(direction - current) >= 0:
                current, sign = direction, 1.0
            else:
                current, sign = normalize_heading(direction + math.pi), -1.0
            heading[t] = current
            speed[t] = sign * dist[k] / p.dt
        else:
            speed[t] = 0.0
            heading[t] = np.nan if current is None else current
    # stationary prefix inherits the first observed heading
    known = np.flatnonzero(np.isfinite(heading[first : n - 1]))
    fill = heading[first + known[0]] if len(known) else 0.0
    for t in range(first, n - 1):
        if np.isnan(heading[t]):
            heading[t] = fill
        else:
            break
    return heading, speed


def infer_actions(track, p: KinematicParams):
    """Recover (accel, steer) actions from a position track.

    ``track`` needs ``points`` (T, 2) and ``valid`` (T,) attributes. Returns
    an :class:`ActionSequence` of length T where entry ``t`` is the action
    applied between states ``t`` and ``t + 1`` (the last two entries and
    padded steps are zero with ``valid=0``), plus the rollout seed state at
    the last point, whose heading and speed come from the last displacement.
    """
    points = np.asarray(track.points, dtype=float)
    valid = np.asarray(track.valid, dtype=bool)
    n = len(points)
    if valid.sum() < 3:
        raise TooFewPoints(f"need at least 3 valid points, got {int(valid.sum())}")
    heading, speed = infer_states(points, valid, p)
    first = int(np.flatnonzero(valid)[0])
    accel = np.zeros(n)
    steer = np.zeros(n)
    act_valid = np.zeros(n, dtype=bool)
    for t in range(first, n - 2):
        v = speed[t]
        accel[t] = (speed[t + 1] - v) / p.dt
        v_safe = math.copysign(max(abs(v), p.v_eps), v if v != 0 else 1.0)
        dtheta = normalize_heading(heading[t + 1] - heading[t])
        steer[t] = math.atan(dtheta * p.wheelbase / (v_safe * p.dt))
        act_valid[t] = True
    accel = np.clip(accel, -p.accel_max, p.accel_max)
    steer = np.clip(steer, -p.steer_max, p.steer_max)
    last = points[-1]
    seed = BicycleState.make(last[0], last[1], heading[n - 2], speed[n - 2])
    return ActionSequence(accel, steer, act_valid), seed


def initial_state(track, p: KinematicParams) -> BicycleState:
    """State at the first valid point, the natural seed for replaying a track."""
    heading, speed = infer_states(track.points, track.valid, p)
    first = int(np.flatnonzero(np.asarray(track.valid, dtype=bool))[0])
    pt = np.asarray(track.points, dtype=float)[first]
    return BicycleState.make(pt[0], pt[1], heading[first], speed[first])


@dataclass
class FeasibilityReport:
    feasible: bool
    max_curvature: float
    max_speed_change: float
    worst_step: int


def check_feasible(positions, s0: BicycleState, p: KinematicParams, tol=1e-6) -> FeasibilityReport:
    """Check a trajectory against curvature and acceleration bounds.

    ``positions`` (T, 2) are the states after ``s0``. Curvature is the
    heading change between consecutive displacements (taken modulo pi, so a
    direction reversal at a standstill is allowed) divided by the travelled
    distance. Slack proportional to the positions' floating-point precision
    is granted so float32 rollouts are judged fairly.
    """
    pts = np.asarray(positions)
    eps = float(np.finfo(pts.dtype).eps) if np.issubdtype(pts.dtype, np.floating) else 1e-16
    pts = np.concatenate([s0.pose.position[None, :], pts.astype(float)], axis=0)
    noise = 8.0 * eps * max(1.0, float(np.abs(pts).max()))
    disp = np.diff(pts, axis=0)
    dist = np.hypot(disp[:, 0], disp[:, 1])
    speed = dist / p.dt
    speed_limit = p.accel_max * p.dt * (1.0 + tol) + 2.0 * noise / p.dt
    dv = np.abs(np.diff(np.concatenate([[abs(s0.speed)], speed])))
    max_dv = float(dv.max()) if len(dv) else 0.0
    worst, max_kappa = -1, 0.0
    ok = bool(np.all(dv <= speed_limit))
    if not ok:
        worst = int(np.argmax(dv))
    prev_dir, prev_dist = None, None
    for t in range(len(disp)):
        if dist[t] <= noise:
            continue
        direction = math.atan2(disp[t, 1], disp[t, 0])
        if prev_dir is not None:
            turn = normalize_heading(2.0 * (direction - prev_dir)) / 2.0
            kappa = abs(turn) / prev_dist
            slack = 2.0 * noise / (prev_dist * min(prev_dist, dist[t]))
            limit = p.max_curvature * (1.0 + tol) + slack
            if kappa - slack > max_kappa:
                max_kappa = kappa - slack
            if kappa > limit:
                ok = False
                worst = t if worst < 0 else worst
        prev_dir, prev_dist = direction, dist[t]
    return FeasibilityReport(ok, max_kappa, max_dv, worst)
