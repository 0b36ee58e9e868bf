"""Scene containers and the per-agent local reference frame."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import Pose
from .kinematics import (
    ActionSequence,
    BicycleState,
    KinematicParams,
    TooFewPoints,
    infer_actions,
    infer_states,
)


class UnknownAgent(KeyError):
    pass


class DegenerateHeading(ValueError):
    pass


class AgentKind(str, Enum):
    CAR = "Car"
    TRUCK = "Truck"
    PEDESTRIAN = "Pedestrian"
    BICYCLE = "Bicycle"

    @property
    def is_vehicle(self):
        return self in (AgentKind.CAR, AgentKind.TRUCK)


class PolylineKind(str, Enum):
    ROAD_BOUNDARY = "RoadBoundary"
    ROAD_PROPERTY = "RoadProperty"

    @property
    def index(self):
        return 0 if self is PolylineKind.ROAD_BOUNDARY else 1


def check_padding(valid):
    """True when ``valid`` is empty of ones or a contiguous suffix of ones."""
    v = np.asarray(valid, dtype=bool)
    if not v.any():
        return True
    first = int(np.argmax(v))
    return bool(v[first:].all())


@dataclass
class PositionTrack:
    agent_id: int
    kind: AgentKind
    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.kind = AgentKind(self.kind)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.valid = np.asarray(self.valid, dtype=bool)
        if len(self.valid) != len(self.points):
            raise ValueError("points and valid must have the same length")
        if np.any(self.points[~self.valid] != 0.0):
            raise ValueError(f"track {self.agent_id}: padded points must be (0, 0)")
        if not np.all(np.isfinite(self.points)):
            raise ValueError(f"track {self.agent_id}: non-finite point")
        if not check_padding(self.valid):
            raise ValueError(f"track {self.agent_id}: valid flags must form a contiguous suffix")

    @property
    def current(self):
        return self.points[-1]

    def as_matrix(self):
        """3 x T matrix of (x, y, valid) rows."""
        return np.concatenate([self.points.T, self.valid[None, :].astype(float)], axis=0)


@dataclass
class Polyline:
    points: np.ndarray
    kind: PolylineKind

    def __post_init__(self):
        self.kind = PolylineKind(self.kind)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(self.points) < 2:
            raise ValueError("a polyline needs at least two points")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("polyline points must be finite")
        if np.any(np.all(np.diff(self.points, axis=0) == 0.0, axis=1)):
            raise ValueError("consecutive polyline points must be distinct")

    @property
    def length(self):
        return float(np.hypot(*np.diff(self.points, axis=0).T).sum())


@dataclass
class Scene:
    tracks: list[PositionTrack]
    futures: dict[int, np.ndarray]
    map: list[Polyline]
    dt: float = 0.1

    def __post_init__(self):
        ids = [t.agent_id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")
        lengths = {len(t.points) for t in self.tracks}
        if len(lengths) > 1:
            raise ValueError("all tracks must share the same past length")
        self.futures = {int(k): np.asarray(v, dtype=float).reshape(-1, 2) for k, v in self.futures.items()}
        flen = {len(v) for v in self.futures.values()}
        if len(flen) > 1:
            raise ValueError("all futures must share the same length")
        unknown = set(self.futures) - set(ids)
        if unknown:
            raise ValueError(f"futures for unknown agents {sorted(unknown)}")

    @property
    def agent_ids(self):
        return [t.agent_id for t in self.tracks]

    def track(self, agent_id) -> PositionTrack:
        for t in self.tracks:
            if t.agent_id == agent_id:
                return t
        raise UnknownAgent(agent_id)

    @property
    def t_past(self):
        return len(self.tracks[0].points) if self.tracks else 0

    @property
    def t_future(self):
        return len(next(iter(self.futures.values()))) if self.futures else 0

    def transformed(self, pose: Pose) -> "Scene":
        """Copy with every coordinate mapped through ``pose.to_global``."""
        return _map_scene(self, pose.to_global)


def _map_points(fn, points, valid=None):
    out = fn(points)
    if valid is not None:
        out = np.where(valid[:, None], out, 0.0)
    return out


def _map_scene(scene, fn):
    tracks = [
        PositionTrack(t.agent_id, t.kind, _map_points(fn, t.points, t.valid), t.valid.copy())
        for t in scene.tracks
    ]
    futures = {k: fn(v) for k, v in scene.futures.items()}
    polylines = [Polyline(fn(p.points), p.kind) for p in scene.map]
    return Scene(tracks, futures, polylines, scene.dt)


@dataclass
class LocalContext:
    """Map, tracks and futures of one scene expressed in ``ego_id``'s frame."""

    ego_id: int
    map: list[Polyline]
    tracks: list[PositionTrack]
    ego_action_track: ActionSequence
    ego_state: BicycleState
    pose: Pose
    futures: dict[int, np.ndarray] = field(default_factory=dict)
    dt: float = 0.1

    @property
    def ego_track(self) -> PositionTrack:
        for t in self.tracks:
            if t.agent_id == self.ego_id:
                return t
        raise UnknownAgent(self.ego_id)

    def to_global(self) -> Scene:
        """Rebuild the global-frame scene this context was derived from."""
        return _map_scene(Scene(self.tracks, self.futures, self.map, self.dt), self.pose.to_global)


def ego_pose(track: PositionTrack) -> Pose:
    """Current pose of an agent: last valid point, heading of the last movement.

    The heading comes from the most recent non-zero displacement; an agent
    that never moved gets heading 0 in the input frame.
    """
    idx = np.flatnonzero(track.valid)
    if len(idx) < 2 or not track.valid[-1]:
        raise DegenerateHeading(f"agent {track.agent_id} needs two valid points ending at the current step")
    pts = track.points[idx]
    disp = np.diff(pts, axis=0)
    moving = np.flatnonzero(np.hypot(disp[:, 0], disp[:, 1]) > 1e-9)
    heading = math.atan2(disp[moving[-1], 1], disp[moving[-1], 0]) if len(moving) else 0.0
    return Pose(float(pts[-1, 0]), float(pts[-1, 1]), heading)


def to_local_frame(scene: Scene, ego_id, params: KinematicParams | None = None) -> LocalContext:
    """Express ``scene`` in the frame of ``ego_id`` at the current step.

    Padded track entries stay at (0, 0). The ego action track is inferred
    from the ego's local track; with only two valid points it is all padding
    and the rollout seed keeps the last observed displacement.
    """
    params = params or KinematicParams(dt=scene.dt)
    try:
        ego = scene.track(ego_id)
    except UnknownAgent:
        raise UnknownAgent(f"agent {ego_id} not in scene") from None
    pose = ego_pose(ego)
    local = _map_scene(scene, pose.to_local)
    ego_local = next(t for t in local.tracks if t.agent_id == ego_id)
    ego_local.points[-1] = 0.0
    try:
        actions, seed = infer_actions(ego_local, params)
    except TooFewPoints:
        heading, speed = infer_states(ego_local.points, ego_local.valid, params)
        n = len(ego_local.points)
        actions = ActionSequence(np.zeros(n), np.zeros(n), np.zeros(n, dtype=bool))
        seed = BicycleState.make(0.0, 0.0, heading[n - 2], speed[n - 2])
    return LocalContext(
        ego_id=ego_id,
        map=local.map,
        tracks=local.tracks,
        ego_action_track=actions,
        ego_state=seed,
        pose=pose,
        futures=local.futures,
        dt=scene.dt,
    )
