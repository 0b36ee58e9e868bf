"""Multi-modal action decoder followed by the kinematic output stage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import ActionSequence, BicycleState, KinematicParams, rollout_batch
from .nn import BatchNorm, GRUCell, Linear, ParamStore
from .nn import tensor as T


@dataclass(frozen=True)
class DecoderConfig:
    modes: int = 3
    hidden: int = 512
    gru_layers: int = 2
    gru_iters: int = 3
    pre_layers: tuple = (512, 256)
    horizon: int = 30
    head_gain: float = 0.0  # 0 starts every mode at the seed-state coasting rollout

    def __post_init__(self):
        if self.modes < 1 or self.horizon < 1 or self.gru_iters < 1 or self.gru_layers < 1:
            raise ValueError("modes, horizon, gru_iters and gru_layers must be >= 1")


@dataclass
class TrajectoryPrediction:
    modes: np.ndarray  # (m, T, 2)
    actions: list[ActionSequence]
    scores: np.ndarray  # (m,)

    @property
    def num_modes(self):
        return len(self.scores)


class ActionDecoder:
    """concat(z, w) -> [linear -> BN -> tanh] x2 -> stacked GRU unrolled with
    a constant input -> linear heads for m action sequences and m logits.

    Accelerations and steering angles are squashed by ``tanh`` and scaled to
    the kinematic bounds, so every decoded mode is feasible by construction.
    """

    def __init__(self, store: ParamStore, name, d_in, cfg: DecoderConfig, kin: KinematicParams):
        self.cfg, self.kin = cfg, kin
        self.d_in = d_in
        self.pre = []
        width = d_in
        for i, size in enumerate(cfg.pre_layers):
            self.pre.append((Linear(store, f"{name}.pre{i}", width, size), BatchNorm(store, f"{name}.pre{i}.bn", size)))
            width = size
        self.grus = []
        for i in range(cfg.gru_layers):
            self.grus.append(GRUCell(store, f"{name}.gru{i}", width if i == 0 else cfg.hidden, cfg.hidden))
        self.action_head = Linear(
            store, f"{name}.action_head", cfg.hidden, cfg.modes * cfg.horizon * 2, gain=cfg.head_gain
        )
        self.score_head = Linear(store, f"{name}.score_head", cfg.hidden, cfg.modes)

    def __call__(self, z, w):
        """Raw decoder outputs: actions (B, m, T, 2) as (accel, steer) and
        mode logits (B, m)."""
        z = T.as_tensor(z, dtype=self.score_head.weight.dtype)
        w = T.as_tensor(w, dtype=z.dtype)
        x = T.concat([z, w], axis=1)
        if x.shape[1] != self.d_in:
            raise ValueError(f"decoder expects {self.d_in} input features, got {x.shape[1]}")
        for linear, bn in self.pre:
            x = T.tanh(bn(linear(x)))
        b = x.shape[0]
        hidden = [T.Tensor(np.zeros((b, self.cfg.hidden), dtype=x.dtype)) for _ in self.grus]
        for _ in range(self.cfg.gru_iters):
            inp = x
            for i, cell in enumerate(self.grus):
                hidden[i] = cell(inp, hidden[i])
                inp = hidden[i]
        top = hidden[-1]
        raw = T.tanh(self.action_head(top)).reshape(b, self.cfg.modes, self.cfg.horizon, 2)
        scale = np.array([self.kin.accel_max, self.kin.steer_max], dtype=x.dtype)
        return raw * scale, self.score_head(top)

    def rollout(self, actions, seeds):
        """Positions (B, m, T, 2) for decoded ``actions`` from per-row seed
        states ``seeds`` (B, 4) of (x, y, heading, speed)."""
        b, m, t, _ = actions.shape
        seeds = np.repeat(np.asarray(seeds, dtype=float), m, axis=0)
        flat = actions.reshape(b * m, t, 2)
        pos = rollout_batch(seeds[:, 0], seeds[:, 1], seeds[:, 2], seeds[:, 3], flat[:, :, 0], flat[:, :, 1], self.kin)
        return pos.reshape(b, m, t, 2)

    def decode(self, z, w, s0: BicycleState) -> TrajectoryPrediction:
        """Single-sample convenience wrapper (run with the store in eval mode)."""
        z = T.as_tensor(z).reshape(1, -1)
        w = T.as_tensor(w).reshape(1, -1)
        with T.no_grad():
            actions, logits = self(z, w)
            pos = self.rollout(actions, s0.as_array()[None, :])
            scores = T.softmax(logits, axis=-1)
        acts = [ActionSequence(a[:, 0], a[:, 1]) for a in actions.data[0]]
        return TrajectoryPrediction(pos.data[0], acts, scores.data[0])
