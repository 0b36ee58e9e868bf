"""Planar poses and rigid transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_heading(theta):
    """Wrap an angle (scalar or array) into the half-open interval (-pi, pi]."""
    arr = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("heading must be finite")
    wrapped = arr - TWO_PI * np.round(arr / TWO_PI)
    wrapped = np.where(wrapped <= -math.pi, wrapped + TWO_PI, wrapped)
    wrapped = np.where(wrapped > math.pi, wrapped - TWO_PI, wrapped)
    return float(wrapped) if np.ndim(theta) == 0 else wrapped


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("pose position must be finite")
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    @property
    def position(self):
        return np.array([self.x, self.y])

    def rotation(self):
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, -s], [s, c]])

    def to_local(self, points):
        """Express global ``points`` (..., 2) in this pose's frame."""
        pts = np.asarray(points, dtype=float)
        return (pts - self.position) @ self.rotation()

    def to_global(self, points):
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation().T + self.position

    def compose(self, other: "Pose") -> "Pose":
        """Pose of ``other`` (given in this frame) expressed in the parent frame."""
        p = self.to_global(other.position)
        return Pose(float(p[0]), float(p[1]), self.heading + other.heading)
