"""Bicycle model: stepping, rollout, action inference, feasibility."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starcast.kinematics import (
    CLAMP_EVENTS,
    ActionSequence,
    BicycleState,
    KinematicParams,
    NonFiniteState,
    TooFewPoints,
    check_feasible,
    initial_state,
    infer_actions,
    rollout,
    rollout_batch,
    step,
)
from starcast.nn import Tensor
from starcast.nn.gradcheck import check_gradients
from starcast.scene import PositionTrack

P = KinematicParams()


def _track(points, valid=None):
    points = np.asarray(points, dtype=float)
    valid = np.ones(len(points), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    return PositionTrack(0, "Car", np.where(valid[:, None], points, 0.0), valid)


def smooth_actions(rng, n):
    """Low-frequency accel/steer profiles well inside the bounds."""
    t = np.arange(n) * P.dt
    accel = rng.uniform(-1, 1) + 0.5 * np.sin(rng.uniform(0.5, 2) * t + rng.uniform(0, 6))
    steer = rng.uniform(-0.2, 0.2) + 0.1 * np.sin(rng.uniform(0.5, 2) * t + rng.uniform(0, 6))
    return ActionSequence(accel, steer)


class TestStep:
    def test_rest_is_fixed_point(self):
        s = BicycleState.make(1, 2, 0.3, 0.0)
        assert step(s, 0.0, 0.0, P) == s

    def test_straight_motion(self):
        s = step(BicycleState.make(0, 0, 0, 1.0), 0.0, 0.0, P)
        np.testing.assert_allclose(s.as_array(), [0.1, 0.0, 0.0, 1.0], atol=1e-15)

    def test_accelerating_from_rest(self):
        s = BicycleState.make(0, 0, 0, 0.0)
        for _ in range(10):
            s = step(s, 1.0, 0.0, P)
        # oracle: x = sum_t v_t dt with v_t = 0.1 t
        x = sum(0.1 * t * 0.1 for t in range(10))
        assert s.speed == pytest.approx(1.0, abs=1e-12)
        assert s.pose.x == pytest.approx(x, abs=1e-12) and x == pytest.approx(0.45)

    def test_clamping_is_counted(self):
        before = CLAMP_EVENTS["steer"]
        s = step(BicycleState.make(0, 0, 0, 1.0), 0.0, 2.0, P)
        assert CLAMP_EVENTS["steer"] == before + 1
        assert s.pose.heading == pytest.approx(1.0 / P.wheelbase * math.tan(P.steer_max) * P.dt)

    def test_non_finite(self):
        with pytest.raises(NonFiniteState):
            step(BicycleState.make(1.7e308, 0, 0, 1e308), 0.0, 0.0, P)


class TestRollout:
    def test_zero_actions_from_rest(self):
        pts = rollout(BicycleState.make(3, 4, 1, 0), ActionSequence(np.zeros(30), np.zeros(30)), P)
        np.testing.assert_array_equal(pts, np.tile([3.0, 4.0], (30, 1)))

    def test_matches_repeated_step(self):
        rng = np.random.default_rng(0)
        acts = smooth_actions(rng, 30)
        s = BicycleState.make(1, -2, 0.4, 5.0)
        ref = []
        for a, d in zip(acts.accel, acts.steer):
            s = step(s, a, d, P)
            ref.append(s.pose.position)
        np.testing.assert_allclose(rollout(BicycleState.make(1, -2, 0.4, 5.0), acts, P), ref, atol=1e-12)

    def test_constant_steer_circle(self):
        delta = 0.2
        radius = P.wheelbase / math.tan(delta)
        pts = rollout(BicycleState.make(0, 0, 0, 5.0), ActionSequence(np.zeros(10), np.full(10, delta)), P)
        # Euler positions lag the heading by one step: the circle centre
        # is the one tangent to the first displacement at the midpoint of
        # the chord, so check radius from the true centre within 2 %.
        dist = np.hypot(pts[:, 0], pts[:, 1] - radius)
        np.testing.assert_allclose(dist, radius, rtol=0.02)

    def test_speed_bound(self):
        rng = np.random.default_rng(1)
        v0 = 3.0
        acts = ActionSequence(rng.uniform(-20, 20, 30), rng.uniform(-1, 1, 30))
        pts = rollout(BicycleState.make(0, 0, 0, v0), acts, P)
        disp = np.hypot(*np.diff(np.vstack([[0, 0], pts]), axis=0).T)
        assert np.all(disp <= (abs(v0) + P.accel_max * 30 * P.dt) * P.dt + 1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        seeds = rng.normal(size=(4, 4))
        acc, st_ = rng.normal(size=(4, 12)), rng.normal(size=(4, 12)) * 0.2
        batch = rollout_batch(*seeds.T, acc, st_, P)
        for i in range(4):
            one = rollout(BicycleState.make(*seeds[i]), ActionSequence(acc[i], st_[i]), P)
            np.testing.assert_allclose(batch[i], one, atol=1e-12)

    def test_tensor_path_matches_numpy(self):
        rng = np.random.default_rng(3)
        acc, st_ = rng.normal(size=(2, 15)), rng.normal(size=(2, 15)) * 0.3
        x0 = np.array([0.0, 1.0]), np.array([0.0, -1.0]), np.array([0.2, 3.0]), np.array([4.0, -2.0])
        ref = rollout_batch(*x0, acc, st_, P)
        out = rollout_batch(*x0, Tensor(acc), Tensor(st_), P)
        np.testing.assert_allclose(out.data, ref, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        acc, st_ = rng.normal(size=(2, 10)), rng.normal(size=(2, 10)) * 0.2
        x0 = np.zeros(2), np.zeros(2), np.array([0.1, -0.5]), np.array([5.0, 2.0])
        w = rng.normal(size=(2, 10, 2))

        def fn(a, s):
            return (rollout_batch(*x0, a, s, P) * w).sum()

        assert check_gradients(fn, [acc, st_], eps=1e-5) < 1e-4


class TestInferActions:
    def test_uniform_straight_motion(self):
        acts, seed = infer_actions(_track([[i, 0] for i in range(10)]), P)
        np.testing.assert_allclose(acts.accel[acts.valid], 0.0, atol=1e-9)
        np.testing.assert_allclose(acts.steer[acts.valid], 0.0, atol=1e-12)
        assert seed.speed == pytest.approx(10.0)

    def test_stationary(self):
        acts, seed = infer_actions(_track([[2, 3]] * 6), P)
        np.testing.assert_array_equal(acts.accel, 0.0)
        np.testing.assert_array_equal(acts.steer, 0.0)
        assert seed.speed == 0.0

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            infer_actions(_track([[0, 0], [0, 0], [1, 0]], [False, True, True]), P)

    def test_padding_yields_invalid_zero_actions(self):
        pts = [[0, 0], [0, 0], [0, 0], [1, 0], [2, 0], [3, 0]]
        acts, _ = infer_actions(_track(pts, [0, 0, 1, 1, 1, 1]), P)
        np.testing.assert_array_equal(acts.valid, [0, 0, 1, 1, 0, 0])
        np.testing.assert_array_equal(acts.accel[:2], 0.0)

    def test_recovers_rollout_actions(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            acts = smooth_actions(rng, 24)
            s0 = BicycleState.make(*rng.normal(size=2) * 10, rng.uniform(-3, 3), rng.uniform(4, 12))
            pts = np.vstack([s0.pose.position, rollout(s0, acts, P)])
            got, _ = infer_actions(_track(pts), P)
            valid = got.valid
            np.testing.assert_allclose(got.accel[valid], acts.accel[: valid.sum()], atol=1e-3)
            np.testing.assert_allclose(got.steer[valid], acts.steer[: valid.sum()], atol=1e-3)

    def test_round_trip_reproduces_track(self):
        rng = np.random.default_rng(6)
        acts = smooth_actions(rng, 24)
        s0 = BicycleState.make(5, -3, 2.5, 8.0)
        pts = np.vstack([s0.pose.position, rollout(s0, acts, P)])
        got, _ = infer_actions(_track(pts), P)

        start = initial_state(_track(pts), P)
        n = int(got.valid.sum())
        replay = rollout(start, ActionSequence(got.accel[:n], got.steer[:n]), P)
        np.testing.assert_allclose(replay, pts[1 : n + 1], atol=1e-6)

    def test_reversing_keeps_heading(self):
        s0 = BicycleState.make(0, 0, 0.0, -2.0)
        pts = np.vstack([[0, 0], rollout(s0, ActionSequence(np.zeros(10), np.full(10, 0.1)), P)])
        acts, seed = infer_actions(_track(pts), P)
        # first motion is read as forward, heading pi; the inferred model still replays the track
        assert seed.speed == pytest.approx(2.0)
        np.testing.assert_allclose(np.abs(acts.steer[acts.valid]), 0.1, atol=1e-9)


class TestFeasibility:
    def test_decoded_rollouts_pass(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            raw = np.tanh(rng.normal(size=(30, 2)) * 3)
            acts = ActionSequence(raw[:, 0] * P.accel_max, raw[:, 1] * P.steer_max)
            s0 = BicycleState.make(0, 0, 0, rng.uniform(-5, 15))
            assert check_feasible(rollout(s0, acts, P), s0, P).feasible

    def test_float32_rollout_passes(self):
        s0 = BicycleState.make(0, 0, 0, 10.0)
        acts = ActionSequence(np.full(30, P.accel_max), np.full(30, P.steer_max))
        pts = rollout(s0, acts, P).astype(np.float32)
        assert check_feasible(pts, s0, P).feasible

    def test_teleport_fails(self):
        s0 = BicycleState.make(0, 0, 0, 1.0)
        pts = np.array([[0.1, 0.0], [5.0, 0.0]])
        assert not check_feasible(pts, s0, P).feasible

    def test_sharp_turn_fails(self):
        s0 = BicycleState.make(0, 0, 0, 10.0)
        pts = np.array([[1.0, 0.0], [2.0, 0.0], [2.0, 1.0]])
        rep = check_feasible(pts, s0, P)
        assert not rep.feasible and rep.max_curvature > P.max_curvature


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_round_trip_property(seed):
    rng = np.random.default_rng(seed)
    acts = smooth_actions(rng, 20)
    s0 = BicycleState.make(*rng.uniform(-50, 50, 2), rng.uniform(-math.pi, math.pi), rng.uniform(2, 15))
    pts = np.vstack([s0.pose.position, rollout(s0, acts, P)])
    if np.any(np.hypot(*np.diff(pts, axis=0).T) < P.dt):
        return
    got, seed_state = infer_actions(_track(pts), P)
    n = int(got.valid.sum())

    replay = rollout(initial_state(_track(pts), P), ActionSequence(got.accel[:n], got.steer[:n]), P)
    np.testing.assert_allclose(replay, pts[1 : n + 1], atol=1e-6)
