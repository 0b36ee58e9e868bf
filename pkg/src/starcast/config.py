"""Flat run configuration shared by every CLI verb."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .decoder import DecoderConfig
from .kinematics import KinematicParams
from .model import ModelConfig
from .training import LossConfig, TrainConfig


class ConfigError(ValueError):
    pass


# keys that change the network or its input featurisation
MODEL_KEYS = (
    "modes", "horizon", "hidden", "gru_layers", "gru_iters", "head_gain", "joint_gain", "heads",
    "vec_len", "max_vectors_per_polyline", "coord_scale", "dtype",
    "wheelbase", "dt", "steer_max", "accel_max", "v_eps",
)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mode: str = "single"
    # training
    epochs: int = 10
    batch: int = 8
    lr: float = 1e-4
    plateau_factor: float = 0.2
    plateau_patience: int = 2
    epsilon_region: float = 1e-4
    beta: float = 1.0
    regression: str = "smooth-l1"
    # data
    t_past: int = 25
    stride: int = 15
    radius: float = 10.0
    frame_rate: float = 10.0
    # model
    modes: int = 3
    horizon: int = 30
    hidden: int = 512
    gru_layers: int = 2
    gru_iters: int = 3
    head_gain: float = 0.0
    joint_gain: float = 0.0
    heads: int = 8
    vec_len: float = 2.0
    max_vectors_per_polyline: int | None = None
    coord_scale: float = 0.1
    dtype: str = "float32"
    # kinematics
    wheelbase: float = 2.7
    dt: float = 0.1
    steer_max: float = math.pi / 4
    accel_max: float = 10.0
    v_eps: float = 0.1

    def __post_init__(self):
        if self.mode not in ("single", "joint"):
            raise ConfigError("mode must be 'single' or 'joint'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be 'float32' or 'float64'")
        try:
            self.train_config()
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def keys(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, values: dict, base: "RunConfig | None" = None):
        unknown = sorted(set(values) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged = dataclasses.asdict(base or cls())
        for key, value in values.items():
            merged[key] = _coerce(key, value)
        return cls(**merged)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None):
        values = {}
        if path is not None:
            try:
                values = json.loads(Path(path).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
            if not isinstance(values, dict):
                raise ConfigError(f"{path}: expected a JSON object")
        cfg = cls.from_dict(values)
        return cls.from_dict(overrides or {}, base=cfg)

    def to_dict(self):
        return dataclasses.asdict(self)

    def model_dict(self):
        d = self.to_dict()
        return {k: d[k] for k in MODEL_KEYS}

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    # -- module configs ----------------------------------------------------------
    def kinematics(self):
        return KinematicParams(self.wheelbase, self.dt, self.steer_max, self.accel_max, self.v_eps)

    def model_config(self):
        dec = DecoderConfig(
            modes=self.modes, hidden=self.hidden, gru_layers=self.gru_layers, gru_iters=self.gru_iters,
            horizon=self.horizon, head_gain=self.head_gain,
        )
        return ModelConfig(
            decoder=dec, kinematics=self.kinematics(), heads=self.heads, joint_gain=self.joint_gain, vec_len=self.vec_len,
            max_vectors_per_polyline=self.max_vectors_per_polyline, coord_scale=self.coord_scale, dtype=self.dtype,
        )

    def loss_config(self):
        return LossConfig(self.beta, self.regression)

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs, batch=self.batch, lr=self.lr, plateau_factor=self.plateau_factor,
            plateau_patience=self.plateau_patience, epsilon_region=self.epsilon_region, seed=self.seed,
            mode=self.mode, loss=LossConfig(self.beta, self.regression),
        )


def _coerce(key, value):
    field_type = {f.name: f.type for f in dataclasses.fields(RunConfig)}[key]
    if value is None:
        if "None" in str(field_type):
            return None
        raise ConfigError(f"{key} may not be null")
    if isinstance(value, str) and field_type not in ("str",):
        if value.lower() in ("none", "null") and "None" in str(field_type):
            return None
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    base = str(field_type).split("|")[0].strip()
    try:
        if base == "int":
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        if base == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if base == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {base}, got {value!r}") from None
    return value


def parse_overrides(pairs):
    """``["key=value", ...]`` -> dict (values parsed later by type)."""
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out
