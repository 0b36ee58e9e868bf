"""Named parameter registry, deterministic initialisation and checkpoints.

Checkpoint format (``.npz``, version 1): every parameter is stored under
``param/<name>`` and every non-trainable buffer (batch-norm running stats)
under ``buffer/<name>`` as a row-major array in the store's dtype. The key
``__meta__`` holds a JSON document ``{"format": "starcast-checkpoint",
"version": 1, "dtype": ..., "seed": ..., "extra": {...}}``.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from .tensor import Tensor

CHECKPOINT_FORMAT = "starcast-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def xavier_uniform(rng, shape, fan_in, fan_out, gain=1.0):
    bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class ParamStore:
    """Owns every trainable tensor of a model.

    Each parameter draws its initial values from a generator seeded by
    ``(seed, crc32(name))`` so initial values do not depend on the order in
    which layers are constructed.
    """

    def __init__(self, seed=0, dtype=np.float32):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    def rng_for(self, name):
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def param(self, name, init):
        """Register ``name`` with values produced by ``init(rng)``."""
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        values = np.asarray(init(self.rng_for(name)), dtype=self.dtype)
        t = Tensor(values, requires_grad=True)
        self.params[name] = t
        return t

    def buffer(self, name, values):
        if name in self.buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.asarray(values, dtype=self.dtype).copy()
        return name

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def num_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def state(self):
        """Copy of all parameter and buffer arrays, keyed like the checkpoint."""
        out = {f"param/{k}": v.data.copy() for k, v in self.params.items()}
        out.update({f"buffer/{k}": v.copy() for k, v in self.buffers.items()})
        return out

    def load_state(self, state):
        expected = set(self.state())
        got = set(state)
        if expected != got:
            missing = sorted(expected - got)[:5]
            unexpected = sorted(got - expected)[:5]
            raise CheckpointError(f"parameter mismatch; missing={missing} unexpected={unexpected}")
        for key, arr in state.items():
            kind, name = key.split("/", 1)
            target = self.params[name].data if kind == "param" else self.buffers[name]
            if target.shape != arr.shape:
                raise CheckpointError(f"shape mismatch for {name}: {target.shape} vs {arr.shape}")
            target[...] = arr

    def save(self, path, extra=None):
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "dtype": self.dtype.name,
            "seed": self.seed,
            "extra": extra or {},
        }
        arrays = self.state()
        arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)


def read_checkpoint(path):
    """Return ``(meta, arrays)`` from a checkpoint file."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path} has no metadata block")
    meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format in {path}: {meta.get('format')} v{meta.get('version')}")
    return meta, arrays
