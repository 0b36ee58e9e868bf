"""Polyline resampling into fixed-length map vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import Polyline, PolylineKind

VECTOR_WIDTH = 6  # start xy, end xy, one-hot kind


class EmptyPolyline(ValueError):
    pass


class NonPositiveLength(ValueError):
    pass


@dataclass(frozen=True)
class MapVector:
    start: tuple
    end: tuple
    kind: tuple

    def as_array(self):
        return np.array([*self.start, *self.end, *self.kind], dtype=float)

    @classmethod
    def from_array(cls, row):
        row = np.asarray(row, dtype=float)
        return cls((row[0], row[1]), (row[2], row[3]), (row[4], row[5]))

    @property
    def length(self):
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])


@dataclass
class VectorizedMap:
    """Per polyline: an (L, 6) array of chained vectors."""

    polylines: list[tuple[int, np.ndarray]]

    def __len__(self):
        return len(self.polylines)

    @property
    def num_vectors(self):
        return int(sum(len(v) for _, v in self.polylines))


def one_hot(kind: PolylineKind):
    v = np.zeros(2)
    v[PolylineKind(kind).index] = 1.0
    return v


def resample_array(points, kind, vec_len, max_vectors=None):
    """Array form of :func:`resample_polyline`: (L, 6) rows."""
    if not vec_len > 0:
        raise NonPositiveLength(f"vector length must be positive, got {vec_len}")
    pts = np.asarray(points, dtype=float)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    arclen = cum[-1]
    if not arclen > 0:
        raise EmptyPolyline("polyline has zero arc length")
    count = max(1, math.ceil(arclen / vec_len - 1e-9))
    stations = np.append(np.arange(count) * vec_len, arclen)
    xy = np.stack([np.interp(stations, cum, pts[:, 0]), np.interp(stations, cum, pts[:, 1])], axis=1)
    rows = np.concatenate([xy[:-1], xy[1:], np.tile(one_hot(kind), (count, 1))], axis=1)
    if max_vectors is not None:
        rows = rows[:max_vectors]
    return rows


def resample_polyline(polyline: Polyline, vec_len: float, max_vectors=None) -> list[MapVector]:
    """Walk the polyline by arc length in steps of ``vec_len``.

    Yields ``ceil(arclen / vec_len)`` chained vectors; the last one covers the
    remainder and may be shorter. Vectors are chords, so one that spans a
    polyline corner is shorter than the arc it covers.
    """
    rows = resample_array(polyline.points, polyline.kind, vec_len, max_vectors)
    return [MapVector.from_array(r) for r in rows]


def vectorize_map(polylines: list[Polyline], vec_len: float = 2.0, max_vectors=None) -> VectorizedMap:
    out = []
    for j, poly in enumerate(polylines):
        try:
            out.append((j, resample_array(poly.points, poly.kind, vec_len, max_vectors)))
        except (EmptyPolyline, NonPositiveLength) as exc:
            raise type(exc)(f"polyline {j}: {exc}") from exc
    return VectorizedMap(out)
