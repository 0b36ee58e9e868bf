"""Synthetic scenes whose futures come from the kinematic model itself.

Each agent drives with piecewise-constant (accel, steer) actions. The past is
a kinematic rollout; the future is rolled out from the seed state that
:func:`~starcast.kinematics.infer_actions` recovers from that past, so the
ground truth lies exactly in the space of decodable trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose
from .kinematics import ActionSequence, KinematicParams, infer_actions, rollout, rollout_batch
from .scene import AgentKind, Polyline, PolylineKind, PositionTrack, Scene

TEMPLATES = ("straight", "curve", "intersection", "reversing", "interaction")

LANE = 3.5


@dataclass(frozen=True)
class SyntheticSpec:
    """``templates`` are cycled over the scenes (scene ``i`` uses
    ``templates[i % len(templates)]``)."""

    n_scenes: int = 32
    agents_per_scene: int = 3
    templates: tuple = ("straight", "curve", "intersection")
    t_past: int = 25
    t_future: int = 30
    dt: float = 0.1
    speed_range: tuple = (3.0, 8.0)
    constant_velocity: bool = False
    random_pose: bool = True

    def __post_init__(self):
        if self.n_scenes < 0 or self.agents_per_scene < 1:
            raise ValueError("n_scenes must be >= 0 and agents_per_scene >= 1")
        if self.t_past < 3 or self.t_future < 1:
            raise ValueError("t_past must be >= 3 and t_future >= 1")
        bad = [t for t in self.templates if t not in TEMPLATES]
        if bad or not self.templates:
            raise ValueError(f"unknown templates {bad}; choose from {TEMPLATES}")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ValueError("speed_range must satisfy 0 < low <= high")


def overfit_spec(n_scenes=32, seed_templates=("straight", "curve", "intersection")):
    """Scene mix of the overfit suite: road templates cycled plus exactly one
    reversing scene in the last slot."""
    reps = [seed_templates[i % len(seed_templates)] for i in range(n_scenes - 1)] + ["reversing"]
    return SyntheticSpec(n_scenes=n_scenes, templates=tuple(reps))


@dataclass
class _Agent:
    x: float
    y: float
    heading: float
    speed: float
    accel: float
    steer: float
    kind: AgentKind = AgentKind.CAR


def _arc(center, radius, a0, a1, n=24):
    ang = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1)


def _straight_map():
    xs = np.array([-150.0, 150.0])
    polys = [Polyline(np.stack([xs, np.full(2, y)], 1), PolylineKind.ROAD_BOUNDARY) for y in (-LANE, LANE)]
    polys.append(Polyline(np.stack([xs, np.zeros(2)], 1), PolylineKind.ROAD_PROPERTY))
    return polys


def _curve_map(radius):
    c = (0.0, radius)
    a0, a1 = -math.pi / 2 - 0.6, -math.pi / 2 + 2.0
    return [
        Polyline(_arc(c, radius - LANE, a0, a1), PolylineKind.ROAD_BOUNDARY),
        Polyline(_arc(c, radius + LANE, a0, a1), PolylineKind.ROAD_BOUNDARY),
        Polyline(_arc(c, radius, a0, a1), PolylineKind.ROAD_PROPERTY),
    ]


def _intersection_map():
    far, w = 80.0, LANE
    polys = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            pts = np.array([[sx * far, sy * w], [sx * w, sy * w], [sx * w, sy * far]])
            polys.append(Polyline(pts, PolylineKind.ROAD_BOUNDARY))
    polys.append(Polyline(np.array([[-far, 0.0], [far, 0.0]]), PolylineKind.ROAD_PROPERTY))
    polys.append(Polyline(np.array([[0.0, -far], [0.0, far]]), PolylineKind.ROAD_PROPERTY))
    return polys


def _curvature_steer(radius, wheelbase):
    return math.atan(wheelbase / radius)


def _agents(template, rng, spec, kin):
    """Initial states (at the first past step) and constant actions."""
    lo, hi = spec.speed_range
    n = spec.agents_per_scene
    t_total = spec.t_past + spec.t_future
    agents = []
    if template in ("straight", "interaction", "reversing"):
        polys = _straight_map()
        gap = 6.0 if template == "interaction" else 12.0
        for i in range(n):
            lane = (-0.5 if i % 2 == 0 else 0.5) * LANE
            v = rng.uniform(lo, hi)
            a = 0.0 if spec.constant_velocity else rng.uniform(-0.5, 0.5)
            if template == "interaction" and not spec.constant_velocity:
                a = rng.uniform(-1.5, 1.5)
            steer = 0.0 if spec.constant_velocity else rng.uniform(-0.01, 0.01)
            heading = 0.0
            if template == "reversing" and i == 0:
                # backing up: the vehicle faces +x while moving towards -x
                v, a, steer = -rng.uniform(1.0, 2.0), 0.0, rng.uniform(-0.05, 0.05)
                if spec.constant_velocity:
                    steer = 0.0
            x = -0.5 * v * t_total * spec.dt + gap * (i // 2) * (1 if i % 4 < 2 else -1)
            agents.append(_Agent(x, lane, heading, v, a, steer))
    elif template == "curve":
        radius = rng.uniform(30.0, 60.0)
        polys = _curve_map(radius)
        for i in range(n):
            r = radius + (-0.5 if i % 2 == 0 else 0.5) * LANE
            v = rng.uniform(lo, hi)
            phi = -math.pi / 2 - 0.3 + 0.25 * (i // 2) * (12.0 / r)
            x, y = r * math.cos(phi), radius + r * math.sin(phi)
            steer = 0.0 if spec.constant_velocity else _curvature_steer(r, kin.wheelbase)
            a = 0.0 if spec.constant_velocity else rng.uniform(-0.3, 0.3)
            agents.append(_Agent(x, y, phi + math.pi / 2, v, a, steer))
    else:
        polys = _intersection_map()
        for i in range(n):
            v = rng.uniform(lo, hi)
            approach = i % 4
            heading = approach * math.pi / 2
            lateral = -0.5 * LANE
            dist = 0.5 * v * spec.t_past * spec.dt + 8.0 + 4.0 * (i // 4)
            back = Pose(0.0, 0.0, heading).to_global(np.array([[-dist, lateral]]))[0]
            turn = 0.0
            if not spec.constant_velocity:
                turn = rng.choice([-1.0, 0.0, 1.0]) * rng.uniform(0.05, 0.15)
            a = 0.0 if spec.constant_velocity else rng.uniform(-0.5, 0.5)
            agents.append(_Agent(back[0], back[1], heading, v, a, turn))
    return polys, agents


def _agent_tracks(agent: _Agent, spec: SyntheticSpec, kin: KinematicParams):
    steps = spec.t_past - 1
    accel = np.full((1, steps), agent.accel)
    steer = np.full((1, steps), agent.steer)
    past = rollout_batch(
        np.array([agent.x]), np.array([agent.y]), np.array([agent.heading]), np.array([agent.speed]),
        accel, steer, kin,
    )[0]
    past = np.concatenate([[[agent.x, agent.y]], past], axis=0)
    valid = np.ones(spec.t_past, dtype=bool)
    probe = PositionTrack(0, agent.kind, past, valid)
    _, seed = infer_actions(probe, kin)
    future_actions = ActionSequence(np.full(spec.t_future, agent.accel), np.full(spec.t_future, agent.steer))
    future = rollout(seed, future_actions, kin)
    return past, future


def _random_pose(rng):
    return Pose(rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(-math.pi, math.pi))


def generate_scene(template, rng, spec: SyntheticSpec, kin: KinematicParams | None = None) -> Scene:
    kin = kin or KinematicParams(dt=spec.dt)
    polys, agents = _agents(template, rng, spec, kin)
    tracks, futures = [], {}
    for i, agent in enumerate(agents):
        past, future = _agent_tracks(agent, spec, kin)
        tracks.append(PositionTrack(i + 1, agent.kind, past, np.ones(spec.t_past, dtype=bool)))
        futures[i + 1] = future
    scene = Scene(tracks, futures, polys, spec.dt)
    if spec.random_pose:
        scene = scene.transformed(_random_pose(rng))
    return scene


def generate_synthetic(seed, spec: SyntheticSpec | None = None) -> list[Scene]:
    """``spec.n_scenes`` scenes; the same seed always yields the same scenes."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    kin = KinematicParams(dt=spec.dt)
    return [
        generate_scene(spec.templates[i % len(spec.templates)], rng, spec, kin)
        for i in range(spec.n_scenes)
    ]
