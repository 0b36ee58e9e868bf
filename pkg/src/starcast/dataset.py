"""Recording I/O, sample windowing, joint-candidate selection and sample
serialisation.

Track file: CSV with header ``agent_id,frame,x,y,kind`` (an optional
``timestamp`` column in seconds is checked against the frame rate).
Map file: JSON ``{"version": 1, "polylines": [{"kind": ..., "points": [[x, y], ...]}]}``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import ActionSequence, KinematicParams, rollout_batch
from .scene import AgentKind, Polyline, PolylineKind, PositionTrack, Scene

MAP_VERSION = 1
SAMPLES_VERSION = 1
TRACK_COLUMNS = ("agent_id", "frame", "x", "y", "kind")


class ParseError(ValueError):
    def __init__(self, path, line, field_name, message):
        super().__init__(f"{path}:{line}: field {field_name!r}: {message}")
        self.path, self.line, self.field = path, line, field_name


class FrameRateMismatch(ValueError):
    pass


@dataclass
class AgentRecord:
    kind: AgentKind
    frames: np.ndarray  # (n,) strictly increasing
    points: np.ndarray  # (n, 2)

    def at(self, frame):
        i = np.searchsorted(self.frames, frame)
        if i < len(self.frames) and self.frames[i] == frame:
            return self.points[i]
        return None


@dataclass
class Recording:
    agents: dict[int, AgentRecord] = field(default_factory=dict)
    map: list[Polyline] = field(default_factory=list)
    frame_rate: float = 10.0

    @property
    def dt(self):
        return 1.0 / self.frame_rate

    @property
    def frame_range(self):
        """(first, last) frame over all agents, or None when empty."""
        if not self.agents:
            return None
        return (
            int(min(a.frames[0] for a in self.agents.values())),
            int(max(a.frames[-1] for a in self.agents.values())),
        )

    @property
    def num_frames(self):
        r = self.frame_range
        return 0 if r is None else r[1] - r[0] + 1


@dataclass
class SampleWindow:
    t0: int
    scene: Scene


# -- files -------------------------------------------------------------------------
def _cell(path, line, row, name, conv):
    try:
        value = conv(row[name])
    except (KeyError, TypeError, ValueError):
        raise ParseError(path, line, name, f"cannot parse {row.get(name)!r}") from None
    if isinstance(value, float) and not math.isfinite(value):
        raise ParseError(path, line, name, "value must be finite")
    return value


def load_tracks(path, frame_rate=10.0):
    path = str(path)
    rows: dict[int, list] = {}
    kinds: dict[int, AgentKind] = {}
    stamps = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return {}
        missing = [c for c in TRACK_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ParseError(path, 1, missing[0], "missing column")
        has_ts = "timestamp" in reader.fieldnames
        for line, row in enumerate(reader, start=2):
            aid = _cell(path, line, row, "agent_id", int)
            frame = _cell(path, line, row, "frame", int)
            x = _cell(path, line, row, "x", float)
            y = _cell(path, line, row, "y", float)
            kind = _cell(path, line, row, "kind", AgentKind)
            if kinds.setdefault(aid, kind) != kind:
                raise ParseError(path, line, "kind", f"agent {aid} changes kind")
            rows.setdefault(aid, []).append((frame, x, y, line))
            if has_ts:
                stamps.append((frame, _cell(path, line, row, "timestamp", float), line))
    if stamps:
        _check_timestamps(path, stamps, frame_rate)
    agents = {}
    for aid in sorted(rows):
        data = sorted(rows[aid])
        frames = np.array([d[0] for d in data], dtype=np.int64)
        dup = np.flatnonzero(np.diff(frames) == 0)
        if len(dup):
            raise ParseError(path, data[dup[0] + 1][3], "frame", f"duplicate frame for agent {aid}")
        pts = np.array([[d[1], d[2]] for d in data], dtype=float)
        agents[aid] = AgentRecord(kinds[aid], frames, pts)
    return agents


def _check_timestamps(path, stamps, frame_rate):
    by_frame = {}
    for frame, ts, line in stamps:
        if by_frame.setdefault(frame, ts) != ts:
            raise FrameRateMismatch(f"{path}:{line}: frame {frame} has inconsistent timestamps")
    frames = np.array(sorted(by_frame))
    ts = np.array([by_frame[f] for f in frames])
    if np.any(np.diff(ts) <= 0):
        raise FrameRateMismatch(f"{path}: timestamps are not monotone in frame order")
    if len(frames) > 1:
        rate = np.diff(frames) / np.diff(ts)
        if np.any(np.abs(rate - frame_rate) > 1e-6 * frame_rate + 1e-3):
            bad = float(rate[np.argmax(np.abs(rate - frame_rate))])
            raise FrameRateMismatch(f"{path}: frame rate {bad:.6g} Hz, expected {frame_rate:g} Hz")


def load_map(path):
    path = str(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, "document", exc.msg) from None
    if not isinstance(doc, dict) or doc.get("version") != MAP_VERSION:
        raise ParseError(path, 1, "version", f"expected version {MAP_VERSION}")
    polylines = []
    for i, item in enumerate(doc.get("polylines", [])):
        try:
            polylines.append(Polyline(np.asarray(item["points"], dtype=float), PolylineKind(item["kind"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, 1, f"polylines[{i}]", str(exc)) from None
    return polylines


def load_recording(track_file, map_file, frame_rate=10.0) -> Recording:
    return Recording(load_tracks(track_file, frame_rate), load_map(map_file), frame_rate)


def write_recording(rec: Recording, track_file, map_file):
    with open(track_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_COLUMNS)
        for aid in sorted(rec.agents):
            a = rec.agents[aid]
            for f, (x, y) in zip(a.frames, a.points):
                w.writerow([aid, int(f), repr(float(x)), repr(float(y)), a.kind.value])
    with open(map_file, "w", encoding="utf-8") as fh:
        json.dump({"version": MAP_VERSION, "polylines": [_poly_dict(p) for p in rec.map]}, fh)


# -- windowing ---------------------------------------------------------------------
def window_starts(num_frames, t_past=25, t_future=30, stride=15):
    span = t_past + t_future
    if num_frames < span:
        return []
    return list(range(0, num_frames - span + 1, stride))


def _window_track(agent: AgentRecord, first, n):
    frames = np.arange(first, first + n)
    present = np.isin(frames, agent.frames)
    # keep only the contiguous run that ends at the current step
    valid = np.zeros(n, dtype=bool)
    t = n - 1
    while t >= 0 and present[t]:
        valid[t] = True
        t -= 1
    pts = np.zeros((n, 2))
    idx = np.searchsorted(agent.frames, frames[valid])
    pts[valid] = agent.points[idx]
    return pts, valid


def sample_windows(rec: Recording, t_past=25, t_future=30, stride=15) -> list[SampleWindow]:
    rng = rec.frame_range
    if rng is None:
        return []
    out = []
    for start in window_starts(rec.num_frames, t_past, t_future, stride):
        t0 = rng[0] + start
        current = t0 + t_past - 1
        tracks, futures = [], {}
        for aid in sorted(rec.agents):
            agent = rec.agents[aid]
            if agent.at(current) is None:
                continue
            pts, valid = _window_track(agent, t0, t_past)
            tracks.append(PositionTrack(aid, agent.kind, pts, valid))
            fut_frames = np.arange(current + 1, current + 1 + t_future)
            if np.isin(fut_frames, agent.frames).all():
                futures[aid] = agent.points[np.searchsorted(agent.frames, fut_frames)]
        out.append(SampleWindow(t0, Scene(tracks, futures, list(rec.map), rec.dt)))
    return out


def extract_samples(rec: Recording, t_past=25, t_future=30, stride=15) -> list[Scene]:
    """One scene per window; windows start every ``stride`` frames."""
    return [w.scene for w in sample_windows(rec, t_past, t_future, stride)]


def fully_present(scene: Scene, agent_id):
    return bool(scene.track(agent_id).valid.all()) and agent_id in scene.futures


def select_joint_candidates(scene: Scene, ego_id, radius=10.0):
    """Vehicles present over the whole window that come within ``radius`` of
    the virtual ego at any step; ego first, then ascending agent id."""
    if not fully_present(scene, ego_id):
        raise ValueError(f"agent {ego_id} is not present over the whole window")
    ego_path = np.concatenate([scene.track(ego_id).points, scene.futures[ego_id]])
    out = [ego_id]
    for aid in sorted(scene.agent_ids):
        if aid == ego_id or not fully_present(scene, aid) or not scene.track(aid).kind.is_vehicle:
            continue
        path = np.concatenate([scene.track(aid).points, scene.futures[aid]])
        if np.min(np.hypot(*(path - ego_path).T)) <= radius:
            out.append(aid)
    return out


@dataclass
class SampleRecord:
    """A scene with a virtual ego and its joint candidates."""

    scene: Scene
    ego: int
    candidates: list[int]
    t0: int = 0
    source: str = ""

    def targets(self, joint=True):
        return list(self.candidates) if joint else [self.ego]


def build_samples(rec: Recording, radius=10.0, t_past=25, t_future=30, stride=15, source=""):
    """Every vehicle present over a whole window becomes a virtual ego."""
    out = []
    for win in sample_windows(rec, t_past, t_future, stride):
        for aid in win.scene.agent_ids:
            if win.scene.track(aid).kind.is_vehicle and fully_present(win.scene, aid):
                cands = select_joint_candidates(win.scene, aid, radius)
                out.append(SampleRecord(win.scene, aid, cands, win.t0, source))
    return out


# -- serialisation -----------------------------------------------------------------
def _poly_dict(p: Polyline):
    return {"kind": p.kind.value, "points": p.points.tolist()}


def scene_to_dict(scene: Scene):
    return {
        "dt": scene.dt,
        "tracks": [
            {"id": t.agent_id, "kind": t.kind.value, "points": t.points.tolist(), "valid": t.valid.astype(int).tolist()}
            for t in scene.tracks
        ],
        "futures": {str(k): v.tolist() for k, v in sorted(scene.futures.items())},
        "map": [_poly_dict(p) for p in scene.map],
    }


def scene_from_dict(d) -> Scene:
    tracks = [PositionTrack(t["id"], t["kind"], np.asarray(t["points"], dtype=float).reshape(-1, 2), t["valid"])
              for t in d["tracks"]]
    futures = {int(k): np.asarray(v, dtype=float) for k, v in d["futures"].items()}
    polys = [Polyline(np.asarray(p["points"], dtype=float), p["kind"]) for p in d["map"]]
    return Scene(tracks, futures, polys, d["dt"])


def sample_to_dict(s: SampleRecord):
    return {"ego": s.ego, "candidates": s.candidates, "t0": s.t0, "source": s.source, "scene": scene_to_dict(s.scene)}


def sample_from_dict(d) -> SampleRecord:
    return SampleRecord(scene_from_dict(d["scene"]), d["ego"], list(d["candidates"]), d.get("t0", 0), d.get("source", ""))


def config_hash(config: dict):
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_samples(samples: list[SampleRecord], out_dir, config=None, extra=None):
    """Write ``samples.jsonl`` and ``manifest.json``; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(sample_to_dict(s), sort_keys=True) for s in samples]
    body = "".join(line + "\n" for line in lines)
    (out_dir / "samples.jsonl").write_text(body, encoding="utf-8")
    manifest = {
        "version": SAMPLES_VERSION,
        "count": len(samples),
        "windows": len({(s.source, s.t0) for s in samples}),
        "joint_candidates": sum(len(s.candidates) for s in samples),
        "config_hash": config_hash(config or {}),
        "content_hash": hashlib.sha256(body.encode()).hexdigest(),
    }
    manifest.update(extra or {})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def read_samples(samples_dir) -> tuple[dict, list[SampleRecord]]:
    samples_dir = Path(samples_dir)
    manifest_path = samples_dir / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"no manifest.json in {samples_dir}") from None
    if manifest.get("version") != SAMPLES_VERSION:
        raise ParseError(str(manifest_path), 1, "version", f"expected version {SAMPLES_VERSION}")
    samples = []
    with open(samples_dir / "samples.jsonl", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                samples.append(sample_from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(str(samples_dir / "samples.jsonl"), line_no, "sample", str(exc)) from None
    if len(samples) != manifest.get("count"):
        raise ParseError(str(manifest_path), 1, "count", f"manifest says {manifest.get('count')}, found {len(samples)}")
    return manifest, samples


# -- synthetic recordings ---------------------------------------------------------
def synthetic_recording(seed, n_frames=100, n_agents=4, frame_rate=10.0) -> Recording:
    """Vehicles on a two-lane road entering at staggered frames, driven by
    the kinematic model with constant actions."""
    from .synthetic import _straight_map

    rng = np.random.default_rng(seed)
    kin = KinematicParams(dt=1.0 / frame_rate)
    agents = {}
    for i in range(n_agents):
        start = int(rng.integers(0, max(1, n_frames // 5))) if i else 0
        length = n_frames - start
        lane = (-0.5 if i % 2 == 0 else 0.5) * 3.5
        v = rng.uniform(4.0, 9.0)
        x0 = -60.0 + 8.0 * i
        acts = ActionSequence(np.full(length - 1, rng.uniform(-0.3, 0.3)), np.full(length - 1, rng.uniform(-0.004, 0.004)))
        pts = rollout_batch(np.array([x0]), np.array([lane]), np.array([0.0]), np.array([v]),
                            acts.accel[None], acts.steer[None], kin)[0]
        pts = np.concatenate([[[x0, lane]], pts])
        agents[i + 1] = AgentRecord(AgentKind.CAR, np.arange(start, n_frames), pts)
    return Recording(agents, _straight_map(), frame_rate)
