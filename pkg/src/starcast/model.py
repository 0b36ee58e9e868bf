"""Full prediction pipeline: local frames -> encoders -> star graphs ->
interaction attention -> (optional) joint attention -> action decoder.

A *sample* is a scene plus an ordered list of target agents. In single-agent
mode every target is predicted from its own local context alone; in joint
mode the targets are the joint candidates and their per-frame features are
fused by the masked joint attention before decoding.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .decoder import ActionDecoder, DecoderConfig, TrajectoryPrediction
from .encoders import MapVectorEmbedding, TrackEncoder, TrackEncoderConfig
from .geometry import Pose
from .interaction import (
    MultiHeadAttention,
    batch_joint_masks,
    frame_order,
)
from .kinematics import ActionSequence, KinematicParams
from .mapvec import vectorize_map
from .nn import ParamStore
from .nn import tensor as T
from .scene import Scene, to_local_frame
from .star_graph import StarGraphEncoder, batch_star_graphs


@dataclass(frozen=True)
class ModelConfig:
    encoder: TrackEncoderConfig = field(default_factory=TrackEncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    kinematics: KinematicParams = field(default_factory=KinematicParams)
    heads: int = 8
    joint_gain: float = 0.0  # 0 starts the joint block as a bare layer norm
    vec_len: float = 2.0
    max_vectors_per_polyline: int | None = None
    coord_scale: float = 0.1
    dtype: str = "float32"

    @property
    def d_model(self):
        return self.encoder.d_position

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        enc = dict(d.pop("encoder", {}))
        if "stages" in enc:
            enc["stages"] = tuple(tuple(s) for s in enc["stages"])
        dec = dict(d.pop("decoder", {}))
        if "pre_layers" in dec:
            dec["pre_layers"] = tuple(dec["pre_layers"])
        kin = d.pop("kinematics", {})
        return cls(TrackEncoderConfig(**enc), DecoderConfig(**dec), KinematicParams(**kin), **d)

    def fingerprint(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class Sample:
    scene: Scene
    targets: list[int]


@dataclass
class FrameInput:
    """Network-ready arrays of one target's local context."""

    ego_id: int
    agent_ids: list[int]
    tracks: np.ndarray  # (N, 3, T) scaled (x, y, valid)
    actions: np.ndarray  # (3, T) (accel, steer, valid)
    map_rows: list[np.ndarray]  # per polyline (L, 6), scaled coordinates
    seed: np.ndarray  # (4,) local (x, y, heading, speed)
    pose: Pose
    gt: np.ndarray | None  # (T_fut, 2) local, metres

    @property
    def ego_index(self):
        return self.agent_ids.index(self.ego_id)


def prepare_frame(scene: Scene, ego_id, cfg: ModelConfig) -> FrameInput:
    ctx = to_local_frame(scene, ego_id, dataclasses.replace(cfg.kinematics, dt=scene.dt))
    agent_ids = [t.agent_id for t in ctx.tracks]
    tracks = np.stack([t.as_matrix() for t in ctx.tracks]).astype(float)
    tracks[:, :2] *= cfg.coord_scale
    vmap = vectorize_map(ctx.map, cfg.vec_len, cfg.max_vectors_per_polyline)
    rows = []
    for _, r in vmap.polylines:
        r = r.copy()
        r[:, :4] *= cfg.coord_scale
        rows.append(r)
    return FrameInput(
        ego_id=ego_id,
        agent_ids=agent_ids,
        tracks=tracks,
        actions=ctx.ego_action_track.as_matrix(),
        map_rows=rows,
        seed=ctx.ego_state.as_array(),
        pose=ctx.pose,
        gt=ctx.futures.get(ego_id),
    )


def prepare_sample(sample: Sample, cfg: ModelConfig) -> list[FrameInput]:
    return [prepare_frame(sample.scene, t, cfg) for t in sample.targets]


@dataclass
class ForwardOutput:
    positions: T.Tensor  # (F, m, T, 2) local metres
    logits: T.Tensor  # (F, m)
    actions: T.Tensor  # (F, m, T, 2)
    frames: list[FrameInput]
    sample_index: np.ndarray  # (F,) which sample each frame belongs to


class TrajectoryModel:
    def __init__(self, cfg: ModelConfig | None = None, seed=0):
        self.cfg = cfg = cfg or ModelConfig()
        self.store = store = ParamStore(seed=seed, dtype=np.dtype(cfg.dtype))
        d = cfg.d_model
        self.position_encoder = TrackEncoder(store, "pos_enc", cfg.encoder.d_position, cfg.encoder)
        self.action_encoder = TrackEncoder(store, "act_enc", cfg.encoder.d_action, cfg.encoder)
        self.map_embedding = MapVectorEmbedding(store, "map_embed", d)
        self.star = StarGraphEncoder(store, "star", d, cfg.heads)
        self.interaction = MultiHeadAttention(store, "interaction", d, cfg.heads)
        self.joint = MultiHeadAttention(store, "joint", d, cfg.heads, out_gain=cfg.joint_gain)
        self.decoder = ActionDecoder(
            store, "decoder", d + cfg.encoder.d_action, cfg.decoder, cfg.kinematics
        )

    def train(self):
        self.store.train()

    def eval(self):
        self.store.eval()

    # -- forward -------------------------------------------------------------
    def forward(self, batch: list[list[FrameInput]], joint=False) -> ForwardOutput:
        frames = [f for sample in batch for f in sample]
        sample_index = np.repeat(np.arange(len(batch)), [len(s) for s in batch])
        dtype = self.store.dtype

        # track encoders over every agent of every frame
        n_agents = [len(f.agent_ids) for f in frames]
        agent_offset = np.concatenate([[0], np.cumsum(n_agents)[:-1]]).astype(np.int64)
        z_all = self.position_encoder(np.concatenate([f.tracks for f in frames]).astype(dtype))
        w_ego = self.action_encoder(np.stack([f.actions for f in frames]).astype(dtype))
        ego_rows = agent_offset + np.array([f.ego_index for f in frames])

        # star graphs: one per (frame, polyline), centred on the frame's ego
        graph_frame = np.array([i for i, f in enumerate(frames) for _ in f.map_rows], dtype=np.int64)
        n_graphs = len(graph_frame)
        if n_graphs:
            rows = np.concatenate([r for f in frames for r in f.map_rows]).astype(dtype)
            leaf_graph = np.repeat(np.arange(n_graphs), [len(r) for f in frames for r in f.map_rows])
            leaves = self.map_embedding(rows)
            centers = T.take_rows(z_all, ego_rows[graph_frame])
            q_all = self.star(batch_star_graphs(centers, leaves, leaf_graph))
            table = T.concat([z_all, q_all], axis=0)
        else:
            table = z_all
        n_z = z_all.shape[0]

        # interaction attention over [agents; polylines] per frame
        graph_offset = np.concatenate([[0], np.cumsum([len(f.map_rows) for f in frames])[:-1]]).astype(np.int64)
        stacks = []
        for i, f in enumerate(frames):
            idx = np.concatenate([
                agent_offset[i] + np.arange(n_agents[i]),
                n_z + graph_offset[i] + np.arange(len(f.map_rows)),
            ]).astype(np.int64)
            stacks.append(idx)
        s_max = max(len(s) for s in stacks)
        d = self.cfg.d_model
        padded = T.concat([table, T.Tensor(np.zeros((1, d), dtype=dtype))], axis=0)
        pad_row = padded.shape[0] - 1
        gather = np.full((len(frames), s_max), pad_row, dtype=np.int64)
        mask = np.zeros((len(frames), s_max, s_max), dtype=bool)
        for i, idx in enumerate(stacks):
            n = len(idx)
            gather[i, :n] = idx
            mask[i, :n, :n] = True
            mask[i, np.arange(n, s_max), np.arange(n, s_max)] = True
        x = T.take_rows(padded, gather.reshape(-1)).reshape(len(frames), s_max, d)
        out = self.interaction(x, mask).reshape(len(frames) * s_max, d)

        if not joint:
            z_sel = T.take_rows(out, np.arange(len(frames)) * s_max + np.array([f.ego_index for f in frames]))
        else:
            z_sel = self._joint(out, frames, batch, s_max)

        actions, logits = self.decoder(z_sel, w_ego)
        positions = self.decoder.rollout(actions, np.stack([f.seed for f in frames]))
        return ForwardOutput(positions, logits, actions, frames, sample_index)

    def _joint(self, out, frames, batch, s_max):
        rows, counts, ego_rows = [], [], []
        frame_base = 0
        offset = 0
        for sample in batch:
            k_count = len(sample)
            ids = [f.ego_id for f in sample]
            for k, f in enumerate(sample):
                fi = frame_base + k
                for a in frame_order(k_count, k):
                    rows.append(fi * s_max + f.agent_ids.index(ids[a]))
            ego_rows.extend(offset + np.arange(k_count) * k_count)
            counts.append(k_count)
            frame_base += k_count
            offset += k_count * k_count
        stack = T.take_rows(out, np.array(rows, dtype=np.int64))
        mask = batch_joint_masks(counts)
        fused = self.joint(stack.reshape(1, offset, -1), mask).reshape(offset, -1)
        return T.take_rows(fused, np.array(ego_rows, dtype=np.int64))

    # -- inference helpers -------------------------------------------------
    def predict(self, batch: list[list[FrameInput]], joint=False):
        """Per frame, a :class:`TrajectoryPrediction` in the frame's local
        coordinates. Runs in eval mode without recording a graph."""
        was_training = self.store.training
        self.eval()
        try:
            with T.no_grad():
                out = self.forward(batch, joint)
        finally:
            self.store.training = was_training
        scores = T.softmax(out.logits, axis=-1).data
        preds = []
        for i in range(len(out.frames)):
            acts = [ActionSequence(a[:, 0], a[:, 1]) for a in out.actions.data[i].astype(float)]
            preds.append(TrajectoryPrediction(out.positions.data[i].astype(float), acts, scores[i].astype(float)))
        return preds, out


def to_global_prediction(pred: TrajectoryPrediction, pose: Pose) -> TrajectoryPrediction:
    return TrajectoryPrediction(pose.to_global(pred.modes), pred.actions, pred.scores)
