"""Minimal differentiable building blocks used by every learned module."""

from .layers import BatchNorm, Conv1d, Dropout, GRUCell, LayerNorm, Linear
from .optim import Adam, ReduceOnPlateau
from .params import CheckpointError, ParamStore, read_checkpoint
from .tensor import Tensor, as_tensor, no_grad

__all__ = [
    "Adam",
    "BatchNorm",
    "CheckpointError",
    "Conv1d",
    "Dropout",
    "GRUCell",
    "LayerNorm",
    "Linear",
    "ParamStore",
    "ReduceOnPlateau",
    "Tensor",
    "as_tensor",
    "no_grad",
    "read_checkpoint",
]
