"""Track encoders (1-D CNN feature pyramids) and the map-vector embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mapvec import VECTOR_WIDTH
from .nn import BatchNorm, Conv1d, Linear, ParamStore
from .nn import tensor as T


@dataclass(frozen=True)
class TrackEncoderConfig:
    d_position: int = 128
    d_action: int = 64
    stages: tuple = ((32, 3, 2), (64, 3, 2), (128, 3, 2))
    input_rows: int = 3

    @property
    def min_length(self):
        n = 1
        for _, _, stride in self.stages:
            n *= stride
        return n


class TrackEncoder:
    """Strided conv stages -> lateral 1x1 projections summed at the finest
    temporal scale -> output conv -> temporal max-pool.

    Input is a (B, rows, T) batch; rows are (x, y, valid) or
    (accel, steer, valid).
    """

    def __init__(self, store: ParamStore, name, d_out, cfg: TrackEncoderConfig):
        self.cfg = cfg
        self.d_out = d_out
        self.stages = []
        c_in = cfg.input_rows
        for i, (ch, k, s) in enumerate(cfg.stages):
            conv = Conv1d(store, f"{name}.stage{i}.conv", c_in, ch, k, stride=s)
            bn = BatchNorm(store, f"{name}.stage{i}.bn", ch)
            lateral = Conv1d(store, f"{name}.stage{i}.lateral", ch, d_out, 1)
            self.stages.append((conv, bn, lateral))
            c_in = ch
        self.out = Conv1d(store, f"{name}.out", d_out, d_out, 3)

    def __call__(self, x):
        x = T.as_tensor(x, dtype=self.out.weight.dtype)
        if x.ndim != 3 or x.shape[1] != self.cfg.input_rows:
            raise ValueError(f"track encoder expects (B, {self.cfg.input_rows}, T), got {x.shape}")
        if x.shape[2] < self.cfg.min_length:
            raise ValueError(f"track length {x.shape[2]} shorter than {self.cfg.min_length}")
        feats = []
        h = x
        for conv, bn, lateral in self.stages:
            h = T.relu(bn(conv(h)))
            feats.append(lateral(h))
        finest = feats[0].shape[2]
        pyramid = feats[0]
        for f in feats[1:]:
            idx = (np.arange(finest) * f.shape[2]) // finest
            pyramid = pyramid + f[:, :, idx]
        return self.out(pyramid).max(axis=2)


def check_map_vectors(rows):
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != VECTOR_WIDTH:
        raise ValueError(f"map vectors must be (L, {VECTOR_WIDTH}), got {rows.shape}")
    kinds = rows[:, 4:]
    if not (np.all((kinds == 0) | (kinds == 1)) and np.all(kinds.sum(axis=1) == 1)):
        raise ValueError("map vector type must be a one-hot pair")
    return rows


class MapVectorEmbedding:
    """Single linear map of [start(2), end(2), type(2)] to the node width."""

    def __init__(self, store: ParamStore, name, d_out=128):
        self.linear = Linear(store, name, VECTOR_WIDTH, d_out)

    def __call__(self, rows):
        if not isinstance(rows, T.Tensor):
            rows = check_map_vectors(rows)
        return self.linear(rows)
