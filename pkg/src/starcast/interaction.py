"""Map-dependent interaction attention and the masked joint attention that
fuses several agents' local frames.

Joint stacks are frame-major. Inside frame ``k`` the candidates appear in the
rotated order ``k, k+1, ..., K-1, 0, ..., k-1``, so every frame starts with
its own ego. :func:`frame_order` is the single source of that ordering and
is shared by the stack builder and the mask builder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import LayerNorm, Linear, ParamStore
from .nn import tensor as T


class MissingRow(KeyError):
    pass


class MultiHeadAttention:
    """Self-attention block: Q/K/V projections, masked softmax, output
    projection, residual, then layer norm. No feed-forward sublayer and no
    positional encoding."""

    def __init__(self, store: ParamStore, name, dim=128, heads=8, out_gain=1.0):
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.q = Linear(store, f"{name}.q", dim, dim)
        self.k = Linear(store, f"{name}.k", dim, dim)
        self.v = Linear(store, f"{name}.v", dim, dim)
        self.o = Linear(store, f"{name}.o", dim, dim, gain=out_gain)
        self.norm = LayerNorm(store, f"{name}.norm", dim)
        self.last_weights = None

    def _split(self, x):
        b, s, _ = x.shape
        return x.reshape(b, s, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def attend(self, x, mask=None):
        """Residual sum ``x + out(attention(x))`` before normalisation.

        ``x``: (B, S, dim). ``mask``: optional (B, S, S) or (S, S) boolean,
        true where a query row may attend to a key column.
        """
        x = T.as_tensor(x, dtype=self.q.weight.dtype)
        if x.ndim != 3 or x.shape[2] != self.dim:
            raise ValueError(f"attention expects (B, S, {self.dim}), got {x.shape}")
        b, s, _ = x.shape
        if s == 0:
            raise ValueError("attention over an empty stack")
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.head_dim))
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.ndim == 2:
                mask = mask[None]
            if mask.shape[-2:] != (s, s):
                raise ValueError(f"mask shape {mask.shape} does not match stack length {s}")
            if not mask.any(axis=-1).all():
                raise ValueError("every attention row needs at least one visible column")
            logits = T.where(mask[:, None, :, :], logits, -np.inf)
        weights = T.softmax(logits, axis=-1)
        self.last_weights = weights.data
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, s, self.dim)
        return x + self.o(ctx)

    def __call__(self, x, mask=None):
        return self.norm(self.attend(x, mask))


# -- single-agent interaction ---------------------------------------------------
@dataclass
class EmbeddingStack:
    """Agent rows first, then polyline rows; tags are ("agent", id) / ("polyline", id)."""

    rows: T.Tensor
    tags: list

    @classmethod
    def build(cls, agent_feats, agent_ids, polyline_feats, polyline_ids):
        rows = T.concat([T.as_tensor(agent_feats), T.as_tensor(polyline_feats)], axis=0)
        tags = [("agent", a) for a in agent_ids] + [("polyline", p) for p in polyline_ids]
        return cls(rows, tags)

    def index(self, tag):
        try:
            return self.tags.index(tag)
        except ValueError:
            raise MissingRow(tag) from None


def single_agent_mha(block: MultiHeadAttention, stack: EmbeddingStack):
    """Run ``block`` over one stack; returns a stack with the same tags."""
    if stack.rows.shape[0] == 0:
        raise ValueError("empty embedding stack")
    out = block(stack.rows.reshape(1, *stack.rows.shape))
    return EmbeddingStack(out.reshape(stack.rows.shape), list(stack.tags))


def select_row(stack: EmbeddingStack, tag):
    return stack.rows[stack.index(tag)]


def padded_batch(stacks):
    """Pad variable-length (S_i, d) tensors into (B, S_max, d) plus a mask
    that hides padding columns; padding rows see only themselves."""
    lengths = [s.shape[0] for s in stacks]
    s_max = max(lengths)
    d = stacks[0].shape[1]
    rows, mask = [], np.zeros((len(stacks), s_max, s_max), dtype=bool)
    for i, (s, n) in enumerate(zip(stacks, lengths)):
        if n < s_max:
            s = T.concat([s, T.Tensor(np.zeros((s_max - n, d), dtype=s.dtype))], axis=0)
        rows.append(s)
        mask[i, :n, :n] = True
        mask[i, np.arange(n, s_max), np.arange(n, s_max)] = True
    return T.stack(rows, axis=0), mask, lengths


# -- joint attention ------------------------------------------------------------
def frame_order(num_agents, frame):
    """Candidate order inside ``frame``: rotation starting at the frame's ego."""
    return [(frame + a) % num_agents for a in range(num_agents)]


def joint_row_agents(num_agents):
    """Agent index held by every row of a K*K joint stack."""
    return np.array([frame_order(num_agents, k) for k in range(num_agents)]).reshape(-1)


def build_joint_mask(num_agents):
    """K^2 x K^2 mask: a row attends to every row holding the same agent."""
    if num_agents < 1:
        raise ValueError("joint mask needs at least one agent")
    agents = joint_row_agents(num_agents)
    return agents[:, None] == agents[None, :]


def batch_joint_masks(counts):
    """Block-diagonal composition of per-scene joint masks."""
    counts = list(counts)
    if any(k < 1 for k in counts):
        raise ValueError("every scene needs at least one joint candidate")
    size = sum(k * k for k in counts)
    out = np.zeros((size, size), dtype=bool)
    offset = 0
    for k in counts:
        out[offset : offset + k * k, offset : offset + k * k] = build_joint_mask(k)
        offset += k * k
    return out


@dataclass
class JointStack:
    rows: T.Tensor  # (K*K, d)
    num_agents: int

    @classmethod
    def build(cls, frame_features):
        """``frame_features[k]`` is a (K, d) tensor of the candidates seen in
        frame ``k``, in candidate order (not yet rotated)."""
        k_count = len(frame_features)
        rows = [T.take_rows(frame_features[k], frame_order(k_count, k)) for k in range(k_count)]
        return cls(T.concat(rows, axis=0), k_count)

    def ego_rows(self):
        """Row of agent ``k`` as seen in its own frame, for k = 0..K-1."""
        return np.arange(self.num_agents) * self.num_agents


def joint_mha(block: MultiHeadAttention, stack: JointStack, mask=None):
    k2 = stack.num_agents**2
    if mask is None:
        mask = build_joint_mask(stack.num_agents)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (k2, k2):
        raise ValueError(f"mask must be {k2}x{k2}, got {mask.shape}")
    return block(stack.rows.reshape(1, k2, -1), mask).reshape(k2, -1)
