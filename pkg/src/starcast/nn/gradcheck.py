"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(fn, arrays, index, eps=1e-6):
    """d fn(*arrays) / d arrays[index] by central differences; ``fn`` returns a scalar."""
    x = arrays[index]
    grad = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = float(fn(*arrays))
        flat[i] = old - eps
        lo = float(fn(*arrays))
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def relative_error(a, b, floor=1e-5):
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps gradients that are
    zero analytically (e.g. a bias feeding batch norm) from comparing
    round-off against round-off."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn, arrays, eps=1e-5):
    """Max relative error between analytic and numeric gradients over all inputs.

    ``fn(*tensors)`` builds a scalar :class:`Tensor`; ``arrays`` are float64
    numpy inputs, each of which is checked.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    out.backward()

    def scalar(*xs):
        return fn(*[Tensor(x) for x in xs]).data

    worst = 0.0
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        worst = max(worst, relative_error(analytic, numeric_grad(scalar, arrays, i, eps)))
    return worst


def check_param_gradients(loss_fn, params, eps=1e-5, max_entries=None, rng=None):
    """Relative error for parameters owned by a model; ``loss_fn()`` builds the
    scalar loss from the current parameter values. Optionally samples
    ``max_entries`` coordinates per parameter."""
    for p in params:
        p.grad = None
    loss_fn().backward()
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.data.size) if p.grad is None else p.grad.reshape(-1).copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        num = np.zeros(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            hi = float(loss_fn().data)
            flat[i] = old - eps
            lo = float(loss_fn().data)
            flat[i] = old
            num[j] = (hi - lo) / (2 * eps)
        worst = max(worst, relative_error(analytic[idx], num))
    return worst
