"""Figures: scene renders with predicted modes, training curves, metric plots.

Scene renders are SVG and byte-deterministic: hash salt and metadata are
fixed, and every drawn scene element carries a ``gid`` (``polyline-<i>``,
``agent-<id>``, ``mode-<k>``, ``gt``) so files can be inspected by id.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .scene import PolylineKind, Scene, ego_pose  # noqa: E402

STYLE = {
    "svg.hashsalt": "starcast",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
POLYLINE_STYLE = {
    PolylineKind.ROAD_BOUNDARY: dict(color="black", lw=1.2, ls="-"),
    PolylineKind.ROAD_PROPERTY: dict(color="0.55", lw=0.8, ls="--"),
}
VEHICLE_SIZE = (4.5, 1.8)
SMALL_SIZE = 1.0


def _agent_patch(track, gid, ego=False):
    try:
        pose = ego_pose(track)
        x, y, heading = pose.x, pose.y, pose.heading
    except ValueError:
        (x, y), heading = track.current, 0.0
    if track.kind.is_vehicle:
        w, h = VEHICLE_SIZE
    else:
        w = h = SMALL_SIZE
    patch = Rectangle(
        (x - w / 2, y - h / 2), w, h, angle=math.degrees(heading), rotation_point="center",
        facecolor="tab:blue" if ego else "white", edgecolor="black", lw=0.8, zorder=3,
    )
    patch.set_gid(gid)
    return patch


def render_scene(scene: Scene, path, modes=None, gt=None, ego_id=None, title=None):
    """Write an SVG of ``scene`` with optional predicted ``modes`` (m, T, 2)
    and ground truth ``gt`` (T, 2), all in the scene's coordinates."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 6))
        for i, poly in enumerate(scene.map):
            (line,) = ax.plot(poly.points[:, 0], poly.points[:, 1], **POLYLINE_STYLE[poly.kind], zorder=1)
            line.set_gid(f"polyline-{i}")
        for track in scene.tracks:
            if track.valid[-1]:
                ax.add_patch(_agent_patch(track, f"agent-{track.agent_id}", track.agent_id == ego_id))
        extent = [p.points for p in scene.map] + [t.points[t.valid] for t in scene.tracks]
        if modes is not None:
            modes = np.asarray(modes, dtype=float)
            for k, mode in enumerate(modes):
                (line,) = ax.plot(mode[:, 0], mode[:, 1], color="0.5", lw=1.5, alpha=0.9, zorder=2)
                line.set_gid(f"mode-{k}")
            extent.extend(modes)
        if gt is not None:
            gt = np.asarray(gt, dtype=float)
            (line,) = ax.plot(gt[:, 0], gt[:, 1], color="tab:green", lw=1.5, zorder=2)
            line.set_gid("gt")
            extent.append(gt)
        _frame(ax, scene, ego_id, extent)
        if title:
            ax.set_title(title)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)


def _frame(ax, scene, ego_id, extent):
    """Zoom on the ego (or everything) with a margin."""
    pts = [e for e in extent if len(e)]
    if ego_id is not None:
        centre = scene.track(ego_id).current
        focus = np.concatenate([centre[None]] + [e for e in pts[len(scene.map):] if len(e)])
        half = max(20.0, float(np.abs(focus - centre).max()) + 10.0)
        ax.set_xlim(centre[0] - half, centre[0] + half)
        ax.set_ylim(centre[1] - half, centre[1] + half)
    elif pts:
        allp = np.concatenate(pts)
        lo, hi = allp.min(axis=0) - 5.0, allp.max(axis=0) + 5.0
        ax.set_xlim(lo[0], hi[0])
        ax.set_ylim(lo[1], hi[1])


def plot_history(history, path):
    """Loss and ADE/FDE per epoch for each split."""
    splits = sorted({r["split"] for r in history})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        for split in splits:
            rows = [r for r in history if r["split"] == split]
            ep = [r["epoch"] for r in rows]
            axes[0].plot(ep, [r["loss"] for r in rows], label=split)
            axes[1].plot(ep, [r["ade"] for r in rows], label=f"{split} ADE")
            axes[1].plot(ep, [r["fde"] for r in rows], ls="--", label=f"{split} FDE")
        axes[0].set_ylabel("loss")
        axes[1].set_ylabel("metres")
        for ax in axes:
            ax.set_xlabel("epoch")
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)


def plot_errors(rows, path, label):
    """Distribution of per-target ADE and FDE."""
    ade = np.array([r["ade"] for r in rows])
    fde = np.array([r["fde"] for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        bins = np.linspace(0, max(1e-3, float(fde.max(initial=0.0))), 21)
        ax.hist(ade, bins=bins, alpha=0.6, label="ADE")
        ax.hist(fde, bins=bins, alpha=0.6, label="FDE")
        ax.set_xlabel("error [m]")
        ax.set_ylabel("targets")
        ax.set_title(label)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
