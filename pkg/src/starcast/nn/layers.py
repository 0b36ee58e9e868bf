"""Parameterised layers built on :mod:`starcast.nn.tensor`.

Layers hold references into a :class:`~starcast.nn.params.ParamStore`; the
store's ``training`` flag switches batch norm and dropout behaviour.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParamStore, orthogonal, xavier_uniform


def _check_last_dim(x, d, what):
    if x.shape[-1] != d:
        raise ValueError(f"{what} expects last dimension {d}, got shape {x.shape}")


class Linear:
    """Affine map ``x @ W + b`` with ``W`` of shape (d_in, d_out)."""

    def __init__(self, store: ParamStore, name, d_in, d_out, bias=True, gain=1.0):
        self.d_in, self.d_out = d_in, d_out
        self.weight = store.param(
            f"{name}.weight", lambda rng: xavier_uniform(rng, (d_in, d_out), d_in, d_out, gain)
        )
        self.bias = store.param(f"{name}.bias", lambda rng: np.zeros(d_out)) if bias else None

    def __call__(self, x):
        x = T.as_tensor(x, dtype=self.weight.dtype)
        _check_last_dim(x, self.d_in, "Linear")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv1d:
    def __init__(self, store: ParamStore, name, c_in, c_out, kernel, stride=1, padding=None):
        self.c_in, self.c_out = c_in, c_out
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in, fan_out = c_in * kernel, c_out * kernel
        self.weight = store.param(
            f"{name}.weight", lambda rng: xavier_uniform(rng, (c_out, c_in, kernel), fan_in, fan_out)
        )
        self.bias = store.param(f"{name}.bias", lambda rng: np.zeros(c_out))

    def __call__(self, x):
        x = T.as_tensor(x, dtype=self.weight.dtype)
        return T.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm:
    """Batch normalisation over every axis except the channel axis 1.

    Training mode normalises with batch statistics and updates running
    estimates (momentum 0.1, unbiased variance); eval mode uses the running
    estimates.
    """

    def __init__(self, store: ParamStore, name, channels, momentum=0.1, eps=1e-5):
        self.store = store
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.gamma = store.param(f"{name}.gamma", lambda rng: np.ones(channels))
        self.beta = store.param(f"{name}.beta", lambda rng: np.zeros(channels))
        self.mean_key = store.buffer(f"{name}.running_mean", np.zeros(channels))
        self.var_key = store.buffer(f"{name}.running_var", np.ones(channels))

    def __call__(self, x):
        x = T.as_tensor(x, dtype=self.gamma.dtype)
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise ValueError(f"BatchNorm expects {self.channels} channels on axis 1, got {x.shape}")
        axes = (0,) + tuple(range(2, x.ndim))
        bshape = (1, self.channels) + (1,) * (x.ndim - 2)
        if self.store.training:
            mu = x.mean(axis=axes, keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=axes, keepdims=True)
            n = x.data.size // self.channels
            rm, rv = self.store.buffers[self.mean_key], self.store.buffers[self.var_key]
            rm *= 1.0 - self.momentum
            rm += self.momentum * mu.data.reshape(-1)
            rv *= 1.0 - self.momentum
            rv += self.momentum * var.data.reshape(-1) * (n / max(n - 1, 1))
            xhat = centered / T.sqrt(var + self.eps)
        else:
            mu = self.store.buffers[self.mean_key].reshape(bshape)
            var = self.store.buffers[self.var_key].reshape(bshape)
            xhat = (x - mu) * (1.0 / np.sqrt(var + self.eps))
        return xhat * self.gamma.reshape(bshape) + self.beta.reshape(bshape)


class LayerNorm:
    def __init__(self, store: ParamStore, name, dim, eps=1e-5):
        self.dim, self.eps = dim, eps
        self.gamma = store.param(f"{name}.gamma", lambda rng: np.ones(dim))
        self.beta = store.param(f"{name}.beta", lambda rng: np.zeros(dim))

    def __call__(self, x):
        x = T.as_tensor(x, dtype=self.gamma.dtype)
        _check_last_dim(x, self.dim, "LayerNorm")
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / T.sqrt(var + self.eps) * self.gamma + self.beta


class GRUCell:
    """Gated recurrent unit with gate order (reset, update, new)."""

    def __init__(self, store: ParamStore, name, d_in, hidden):
        self.d_in, self.hidden = d_in, hidden
        self.w_ih = store.param(
            f"{name}.w_ih", lambda rng: xavier_uniform(rng, (d_in, 3 * hidden), d_in, hidden)
        )
        self.w_hh = store.param(
            f"{name}.w_hh",
            lambda rng: np.concatenate([orthogonal(rng, hidden) for _ in range(3)], axis=1),
        )
        self.b_ih = store.param(f"{name}.b_ih", lambda rng: np.zeros(3 * hidden))
        self.b_hh = store.param(f"{name}.b_hh", lambda rng: np.zeros(3 * hidden))

    def __call__(self, x, h):
        x = T.as_tensor(x, dtype=self.w_ih.dtype)
        h = T.as_tensor(h, dtype=self.w_ih.dtype)
        _check_last_dim(x, self.d_in, "GRUCell input")
        _check_last_dim(h, self.hidden, "GRUCell state")
        H = self.hidden
        gi = x @ self.w_ih + self.b_ih
        gh = h @ self.w_hh + self.b_hh
        r = T.sigmoid(gi[..., :H] + gh[..., :H])
        z = T.sigmoid(gi[..., H : 2 * H] + gh[..., H : 2 * H])
        n = T.tanh(gi[..., 2 * H :] + r * gh[..., 2 * H :])
        return (1.0 - z) * n + z * h


class Dropout:
    def __init__(self, store: ParamStore, p=0.0, seed=0):
        self.store, self.p = store, p
        self.rng = np.random.default_rng(seed)

    def __call__(self, x):
        if not self.store.training or self.p == 0.0:
            return x
        keep = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * keep.astype(x.dtype)
