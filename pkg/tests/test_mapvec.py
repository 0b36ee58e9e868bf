"""Polyline resampling into fixed-length map vectors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starcast.mapvec import (
    EmptyPolyline,
    NonPositiveLength,
    resample_array,
    resample_polyline,
    vectorize_map,
)
from starcast.scene import Polyline, PolylineKind

RB, RP = PolylineKind.ROAD_BOUNDARY, PolylineKind.ROAD_PROPERTY


def arc_walk_oracle(points, vec_len):
    """Independent arc-length walk: step along segments one station at a time."""
    pts = [np.asarray(p, dtype=float) for p in points]
    total = sum(np.linalg.norm(b - a) for a, b in zip(pts, pts[1:]))
    stations = []
    s = 0.0
    while s < total - 1e-9:
        stations.append(s)
        s += vec_len
    stations.append(total)

    def point_at(target):
        walked = 0.0
        for a, b in zip(pts, pts[1:]):
            seg = np.linalg.norm(b - a)
            if walked + seg >= target:
                return a + (b - a) * (target - walked) / seg
            walked += seg
        return pts[-1]

    nodes = [point_at(s) for s in stations]
    return [(nodes[i], nodes[i + 1]) for i in range(len(nodes) - 1)]


class TestResample:
    def test_uniform_subdivision(self):
        vecs = resample_polyline(Polyline([[0, 0], [10, 0]], RB), 2.0)
        assert len(vecs) == 5
        assert vecs[0].start == (0, 0) and vecs[0].end == (2, 0)
        assert vecs[-1].start == (8, 0) and vecs[-1].end == (10, 0)

    def test_remainder_rule(self):
        vecs = resample_polyline(Polyline([[0, 0], [5, 0]], RB), 2.0)
        assert len(vecs) == 3
        assert vecs[-1].start == (4, 0) and vecs[-1].end == (5, 0)

    def test_l_shape_matches_arc_walk(self):
        pts = [[0, 0], [3, 0], [3, 4]]
        vecs = resample_polyline(Polyline(pts, RB), 5.0)
        oracle = arc_walk_oracle(pts, 5.0)
        assert len(vecs) == len(oracle) == 2
        for v, (a, b) in zip(vecs, oracle):
            np.testing.assert_allclose(v.start, a, atol=1e-12)
            np.testing.assert_allclose(v.end, b, atol=1e-12)
        np.testing.assert_allclose(vecs[0].end, [3, 2], atol=1e-12)

    def test_short_polyline_kept_as_one_vector(self):
        vecs = resample_polyline(Polyline([[0, 0], [0.5, 0]], RP), 2.0)
        assert len(vecs) == 1 and vecs[0].length == pytest.approx(0.5)

    def test_errors(self):
        with pytest.raises(NonPositiveLength):
            resample_polyline(Polyline([[0, 0], [1, 0]], RB), 0.0)
        with pytest.raises(EmptyPolyline):
            resample_array([[0, 0], [0, 0]], RB, 1.0)

    def test_max_vectors_cap(self):
        assert len(resample_array([[0, 0], [100, 0]], RB, 2.0, max_vectors=7)) == 7

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=2, max_size=6),
        st.floats(0.3, 7.0),
    )
    def test_chaining_count_and_bounds(self, raw, vec_len):
        pts = np.array(raw)
        seg = np.hypot(*np.diff(pts, axis=0).T)
        if np.any(seg < 1e-3):
            return
        rows = resample_array(pts, RB, vec_len)
        arclen = seg.sum()
        assert len(rows) == max(1, math.ceil(arclen / vec_len - 1e-9))
        np.testing.assert_array_equal(rows[1:, :2], rows[:-1, 2:4])
        lengths = np.hypot(*(rows[:, 2:4] - rows[:, :2]).T)
        assert np.all(lengths <= vec_len + 1e-9)
        np.testing.assert_allclose(rows[0, :2], pts[0], atol=1e-9)
        np.testing.assert_allclose(rows[-1, 2:4], pts[-1], atol=1e-9)
        for (a, b), row in zip(arc_walk_oracle(pts, vec_len), rows):
            np.testing.assert_allclose(row[:2], a, atol=1e-7)
            np.testing.assert_allclose(row[2:4], b, atol=1e-7)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(1, 60), st.floats(0.3, 5.0))
    def test_lengths_sum_to_arclength_on_straight_lines(self, x, y, length, vec_len):
        pts = np.array([[x, y], [x + length * 0.6, y + length * 0.8]])
        rows = resample_array(pts, RB, vec_len)
        lengths = np.hypot(*(rows[:, 2:4] - rows[:, :2]).T)
        assert lengths.sum() == pytest.approx(length, abs=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 0.95), st.floats(0.3, 4.0))
    def test_collinear_insertion_invariance(self, frac, vec_len):
        a, b, c = np.array([0.0, 0.0]), np.array([7.0, 1.0]), np.array([9.0, 8.0])
        base = resample_array([a, b, c], RB, vec_len)
        mid = a + frac * (b - a)
        denser = resample_array([a, mid, b, c], RB, vec_len)
        np.testing.assert_allclose(denser, base, atol=1e-9)


class TestVectorizeMap:
    def test_empty_map(self):
        assert len(vectorize_map([])) == 0

    def test_one_hot_types(self):
        vm = vectorize_map([Polyline([[0, 0], [4, 0]], RB), Polyline([[0, 1], [4, 1]], RP)])
        assert len(vm) == 2
        np.testing.assert_array_equal(vm.polylines[0][1][:, 4:], [[1, 0], [1, 0]])
        np.testing.assert_array_equal(vm.polylines[1][1][:, 4:], [[0, 1], [0, 1]])

    def test_error_carries_polyline_index(self):
        with pytest.raises(NonPositiveLength, match="polyline 0"):
            vectorize_map([Polyline([[0, 0], [4, 0]], RB)], vec_len=-1.0)
