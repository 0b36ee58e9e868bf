"""Recording files, windowing, joint candidates and sample serialisation."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starcast.dataset import (
    AgentRecord,
    FrameRateMismatch,
    ParseError,
    Recording,
    SampleRecord,
    build_samples,
    extract_samples,
    load_map,
    load_recording,
    load_tracks,
    read_samples,
    sample_windows,
    scene_from_dict,
    scene_to_dict,
    select_joint_candidates,
    synthetic_recording,
    window_starts,
    write_recording,
    write_samples,
)
from starcast.scene import AgentKind, PositionTrack, Scene, check_padding


def _straight(aid, frames, y=0.0, v=5.0, kind=AgentKind.CAR):
    frames = np.asarray(frames)
    return AgentRecord(kind, frames, np.column_stack([frames * v * 0.1, np.full(len(frames), y)]))


def _scene(paths, kinds=None):
    """Scene from full (past 3 + future 2) paths keyed by agent id."""
    kinds = kinds or {}
    tracks = [PositionTrack(a, kinds.get(a, AgentKind.CAR), p[:3], np.ones(3, bool)) for a, p in paths.items()]
    return Scene(tracks, {a: p[3:] for a, p in paths.items()}, [])


def brute_force_candidates(scene, ego, radius):
    """Double loop over (agent, timestep) distances."""
    def full(a):
        return np.concatenate([scene.track(a).points, scene.futures[a]])

    out = [ego]
    for a in sorted(scene.agent_ids):
        if a == ego or a not in scene.futures or not scene.track(a).valid.all():
            continue
        if not scene.track(a).kind.is_vehicle:
            continue
        ego_path, path = full(ego), full(a)
        if any(np.hypot(*(path[t] - ego_path[t])) <= radius for t in range(len(path))):
            out.append(a)
    return out


class TestFiles:
    def test_empty_track_file(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("")
        assert load_tracks(p) == {}
        p.write_text("agent_id,frame,x,y,kind\n")
        assert load_tracks(p) == {}

    def test_sixty_frames(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("agent_id,frame,x,y,kind\n" + "".join(f"3,{f},{f * 0.5},1.0,Car\n" for f in range(60)))
        agents = load_tracks(p)
        assert list(agents) == [3]
        assert len(agents[3].frames) == 60
        np.testing.assert_array_equal(agents[3].points[-1], [29.5, 1.0])

    def test_parse_error_location(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("agent_id,frame,x,y,kind\n1,0,0,0,Car\n1,1,abc,0,Car\n")
        with pytest.raises(ParseError) as err:
            load_tracks(p)
        assert err.value.line == 3 and err.value.field == "x"

    def test_bad_kind_and_missing_column(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("agent_id,frame,x,y,kind\n1,0,0,0,Tram\n")
        with pytest.raises(ParseError, match="kind"):
            load_tracks(p)
        p.write_text("agent_id,frame,x,kind\n1,0,0,Car\n")
        with pytest.raises(ParseError, match="'y'"):
            load_tracks(p)

    def test_frame_rate_mismatch(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("agent_id,frame,x,y,kind,timestamp\n1,0,0,0,Car,0.0\n1,1,1,0,Car,0.04\n")
        with pytest.raises(FrameRateMismatch):
            load_tracks(p, frame_rate=10.0)
        assert len(load_tracks(p, frame_rate=25.0)[1].frames) == 2

    def test_map_file(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"version": 1, "polylines": [{"kind": "RoadBoundary", "points": [[0, 0], [1, 0]]}]}))
        (poly,) = load_map(p)
        assert poly.kind.value == "RoadBoundary"
        p.write_text(json.dumps({"version": 9, "polylines": []}))
        with pytest.raises(ParseError):
            load_map(p)

    def test_round_trip(self, tmp_path):
        rec = synthetic_recording(0, n_frames=60, n_agents=3)
        write_recording(rec, tmp_path / "t.csv", tmp_path / "m.json")
        back = load_recording(tmp_path / "t.csv", tmp_path / "m.json")
        assert sorted(back.agents) == sorted(rec.agents)
        for aid, a in rec.agents.items():
            np.testing.assert_array_equal(back.agents[aid].frames, a.frames)
            np.testing.assert_array_equal(back.agents[aid].points, a.points)
            assert back.agents[aid].kind == a.kind
        for p, q in zip(back.map, rec.map):
            np.testing.assert_array_equal(p.points, q.points)


class TestWindows:
    def test_fifty_five_frames(self):
        rec = Recording({1: _straight(1, range(55))})
        assert len(extract_samples(rec)) == 1

    def test_seventy_frames(self):
        rec = Recording({1: _straight(1, range(70))})
        assert [w.t0 for w in sample_windows(rec)] == [0, 15]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 400), st.integers(1, 40), st.integers(1, 40), st.integers(1, 30))
    def test_stride_arithmetic(self, n, past, fut, stride):
        starts = window_starts(n, past, fut, stride)
        expected = 0 if n < past + fut else (n - past - fut) // stride + 1
        assert len(starts) == expected
        assert all(s + past + fut <= n for s in starts)

    def test_late_arrival_is_padded(self):
        rec = Recording({1: _straight(1, range(55)), 2: _straight(2, range(20, 55), y=3.0)})
        scene = extract_samples(rec)[0]
        track = scene.track(2)
        np.testing.assert_array_equal(track.valid, np.arange(25) >= 20)
        np.testing.assert_array_equal(track.points[:20], 0.0)
        assert check_padding(track.valid)

    def test_absent_at_current_step_excluded(self):
        rec = Recording({1: _straight(1, range(55)), 2: _straight(2, range(0, 20), y=3.0)})
        assert extract_samples(rec)[0].agent_ids == [1]

    def test_gap_keeps_run_ending_now(self):
        frames = [f for f in range(55) if f != 10]
        scene = extract_samples(Recording({1: _straight(1, frames)}))[0]
        np.testing.assert_array_equal(scene.track(1).valid, np.arange(25) > 10)

    def test_partial_future_has_no_ground_truth(self):
        rec = Recording({1: _straight(1, range(55)), 2: _straight(2, range(40), y=3.0)})
        scene = extract_samples(rec)[0]
        assert 2 in scene.agent_ids and 2 not in scene.futures

    def test_short_recording(self):
        assert extract_samples(Recording({1: _straight(1, range(54))})) == []
        assert extract_samples(Recording()) == []


class TestCandidates:
    def test_lone_ego(self):
        scene = _scene({1: np.zeros((5, 2))})
        assert select_joint_candidates(scene, 1) == [1]

    def test_far_neighbour_excluded(self):
        path = np.column_stack([np.arange(5.0), np.zeros(5)])
        scene = _scene({1: path, 2: path + [0, 50]})
        assert select_joint_candidates(scene, 1, 10.0) == [1]

    def test_brief_crossing_included(self):
        ego = np.column_stack([np.arange(5.0), np.zeros(5)])
        other = ego + [0, 40]
        other[3] = ego[3] + [0, 3]
        scene = _scene({1: ego, 2: other})
        assert select_joint_candidates(scene, 1, 10.0) == brute_force_candidates(scene, 1, 10.0) == [1, 2]

    def test_order_kind_and_errors(self):
        ego = np.zeros((5, 2))
        scene = _scene({5: ego, 9: ego + 1, 2: ego + 2, 4: ego + 3}, kinds={4: AgentKind.PEDESTRIAN})
        assert select_joint_candidates(scene, 9) == [9, 2, 5]
        with pytest.raises(ValueError):
            select_joint_candidates(Scene([PositionTrack(1, "Car", np.zeros((3, 2)), np.ones(3, bool))], {}, []), 1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(1.0, 30.0))
    def test_matches_brute_force(self, seed, radius):
        rng = np.random.default_rng(seed)
        paths = {a: np.cumsum(rng.normal(size=(5, 2)) * 4, axis=0) + rng.uniform(-30, 30, 2) for a in range(1, 6)}
        kinds = {a: AgentKind.BICYCLE for a in range(1, 6) if rng.random() < 0.2}
        scene = _scene(paths, kinds)
        for ego in scene.agent_ids:
            if scene.track(ego).kind.is_vehicle:
                assert select_joint_candidates(scene, ego, radius) == brute_force_candidates(scene, ego, radius)

    def test_distinct_virtual_egos_distinct_sets(self):
        a = np.column_stack([np.arange(5.0), np.zeros(5)])
        scene = _scene({1: a, 2: a + [0, 8], 3: a + [0, 16]})
        sets = {ego: select_joint_candidates(scene, ego, 10.0) for ego in (1, 2, 3)}
        assert sets == {1: [1, 2], 2: [2, 1, 3], 3: [3, 2]}


class TestSamples:
    def test_build_samples_per_vehicle(self):
        rec = Recording({1: _straight(1, range(55)), 2: _straight(2, range(55), y=3.0),
                         3: _straight(3, range(55), y=-3.0, kind=AgentKind.PEDESTRIAN)})
        samples = build_samples(rec)
        assert [s.ego for s in samples] == [1, 2]
        assert samples[0].candidates == [1, 2]
        assert samples[0].targets(joint=False) == [1]

    def test_scene_dict_round_trip(self):
        scene = extract_samples(synthetic_recording(1, 60, 3))[0]
        back = scene_from_dict(json.loads(json.dumps(scene_to_dict(scene))))
        assert back.agent_ids == scene.agent_ids
        for a, b in zip(scene.tracks, back.tracks):
            np.testing.assert_array_equal(a.points, b.points)
            np.testing.assert_array_equal(a.valid, b.valid)
        for k in scene.futures:
            np.testing.assert_array_equal(scene.futures[k], back.futures[k])

    def test_write_read_and_hash(self, tmp_path):
        samples = build_samples(synthetic_recording(2, 80, 4), source="rec")
        m1 = write_samples(samples, tmp_path / "a", {"stride": 15})
        m2 = write_samples(samples, tmp_path / "b", {"stride": 15})
        assert m1 == m2 and m1["count"] == len(samples)
        assert (tmp_path / "a" / "samples.jsonl").read_bytes() == (tmp_path / "b" / "samples.jsonl").read_bytes()
        manifest, back = read_samples(tmp_path / "a")
        assert manifest == m1
        assert [(s.ego, s.candidates, s.t0) for s in back] == [(s.ego, s.candidates, s.t0) for s in samples]

    def test_empty_samples(self, tmp_path):
        manifest = write_samples([], tmp_path)
        assert manifest["count"] == 0 and read_samples(tmp_path)[1] == []

    def test_count_mismatch_detected(self, tmp_path):
        write_samples(build_samples(synthetic_recording(3, 60, 2)), tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        m["count"] += 1
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(ParseError, match="count"):
            read_samples(tmp_path)

    def test_sample_record_targets(self):
        s = SampleRecord(_scene({1: np.zeros((5, 2))}), 1, [1])
        assert s.targets() == [1]

    def test_extracted_tracks_obey_padding(self):
        for scene in extract_samples(synthetic_recording(4, 120, 5)):
            for t in scene.tracks:
                assert check_padding(t.valid)
