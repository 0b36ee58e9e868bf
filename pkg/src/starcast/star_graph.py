"""Star graphs of map vectors around an ego track embedding, and the GAT
that turns each one into a polyline embedding.

Every polyline gets its own directed star: node 0 is the ego track feature,
nodes 1..L are embedded map vectors, each leaf sends one edge to the centre
and every node carries a self-loop. Many stars are processed together as one
graph with a block-diagonal adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .nn import Linear, ParamStore
from .nn import tensor as T
from .nn.params import xavier_uniform


class EmptyPolylineGraph(ValueError):
    pass


@dataclass
class StarGraph:
    center: T.Tensor  # (d,)
    leaves: T.Tensor  # (L, d)

    @property
    def num_leaves(self):
        return self.leaves.shape[0]

    @property
    def num_nodes(self):
        return self.num_leaves + 1

    def edges(self):
        """(src, dst) pairs: leaf -> centre edges, then self-loops."""
        leaf_edges = [(l, 0) for l in range(1, self.num_nodes)]
        return leaf_edges + [(i, i) for i in range(self.num_nodes)]


def build_star_graph(ego_feat, polyline_vecs) -> StarGraph:
    center = T.as_tensor(ego_feat)
    leaves = T.as_tensor(polyline_vecs)
    if leaves.ndim != 2 or leaves.shape[0] == 0:
        raise EmptyPolylineGraph("a star graph needs at least one map vector")
    if center.shape != (leaves.shape[1],):
        raise ValueError(f"centre feature {center.shape} does not match leaf width {leaves.shape[1]}")
    return StarGraph(center, leaves)


@dataclass
class BatchedStarGraphs:
    features: T.Tensor  # (num_nodes, d), graph g occupies rows starts[g]..starts[g+1]-1
    src: np.ndarray
    dst: np.ndarray  # sorted ascending; every node has at least its self-loop
    starts: np.ndarray  # first (centre) node of each graph
    leaf_order: np.ndarray  # input leaf index placed at each leaf node slot

    @property
    def num_nodes(self):
        return self.features.shape[0]

    @property
    def num_graphs(self):
        return len(self.starts)

    @property
    def node_graph(self):
        sizes = np.diff(np.append(self.starts, self.num_nodes))
        return np.repeat(np.arange(self.num_graphs), sizes)

    def adjacency(self):
        """Sparse (dst, src) adjacency; block diagonal over graphs."""
        n = self.num_nodes
        return sp.csr_matrix((np.ones(len(self.src)), (self.dst, self.src)), shape=(n, n))


def batch_star_graphs(centers, leaves, leaf_graph) -> BatchedStarGraphs:
    """Assemble G stars from centre rows (G, d) and leaf rows (V, d).

    ``leaf_graph[v]`` names the star that leaf ``v`` belongs to. Within a
    star, leaves are placed in a canonical order (lexicographic on their
    feature values) so results do not depend on the input leaf order, down
    to the last bit.
    """
    centers = T.as_tensor(centers)
    leaves = T.as_tensor(leaves)
    leaf_graph = np.asarray(leaf_graph, dtype=np.int64)
    n_graphs = centers.shape[0]
    if leaves.shape[0] != len(leaf_graph):
        raise ValueError("leaf_graph must name a graph for every leaf")
    if leaves.shape[0] and (leaf_graph.min() < 0 or leaf_graph.max() >= n_graphs):
        raise ValueError("leaf_graph refers to a missing centre")
    if leaves.shape[0] and leaves.shape[1] != centers.shape[1]:
        raise ValueError("centre and leaf widths differ")
    keys = [leaves.data[:, j] for j in range(leaves.shape[1] - 1, -1, -1)] if leaves.shape[0] else []
    order = np.lexsort(keys + [leaf_graph]) if leaves.shape[0] else np.zeros(0, dtype=np.int64)
    counts = np.bincount(leaf_graph, minlength=n_graphs)
    sizes = counts + 1
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    n_nodes = int(sizes.sum())

    sorted_graph = leaf_graph[order]
    first_leaf = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.arange(len(order)) - first_leaf[sorted_graph]
    leaf_nodes = starts[sorted_graph] + 1 + rank

    gather = np.empty(n_nodes, dtype=np.int64)
    gather[starts] = np.arange(n_graphs)
    gather[leaf_nodes] = n_graphs + order
    features = T.take_rows(T.concat([centers, leaves], axis=0), gather)

    self_loops = np.arange(n_nodes)
    src = np.concatenate([self_loops, leaf_nodes])
    dst = np.concatenate([self_loops, starts[sorted_graph]])
    edge_order = np.lexsort((src, dst))
    return BatchedStarGraphs(features, src[edge_order], dst[edge_order], starts, order)


def batch_from_graphs(graphs: list[StarGraph]) -> BatchedStarGraphs:
    centers = T.stack([g.center for g in graphs], axis=0)
    leaves = T.concat([g.leaves for g in graphs], axis=0)
    leaf_graph = np.repeat(np.arange(len(graphs)), [g.num_leaves for g in graphs])
    return batch_star_graphs(centers, leaves, leaf_graph)


class GATLayer:
    """Multi-head graph attention with additive LeakyReLU scoring.

    Coefficients are softmax-normalised over each node's in-neighbourhood and
    head outputs are concatenated.
    """

    def __init__(self, store: ParamStore, name, dim=128, heads=8, slope=0.2):
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.slope = slope
        self.proj = Linear(store, f"{name}.proj", dim, dim, bias=False)
        hd = self.head_dim
        self.att_src = store.param(f"{name}.att_src", lambda rng: xavier_uniform(rng, (heads, hd), hd, 1))
        self.att_dst = store.param(f"{name}.att_dst", lambda rng: xavier_uniform(rng, (heads, hd), hd, 1))
        self.bias = store.param(f"{name}.bias", lambda rng: np.zeros(dim))
        self.last_attention = None

    def __call__(self, h, src, dst):
        n = h.shape[0]
        wh = self.proj(h).reshape(n, self.heads, self.head_dim)
        s_src = (wh * self.att_src).sum(axis=2)
        s_dst = (wh * self.att_dst).sum(axis=2)
        scores = T.leaky_relu(T.take_rows(s_src, src) + T.take_rows(s_dst, dst), self.slope)
        seg_starts = np.searchsorted(dst, np.arange(n))
        peak = np.maximum.reduceat(scores.data, seg_starts, axis=0)
        ex = T.exp(scores - peak[dst])
        denom = T.segment_sum(ex, dst, n)
        alpha = ex / T.take_rows(denom, dst)
        self.last_attention = alpha.data
        msg = T.take_rows(wh, src) * alpha.reshape(len(src), self.heads, 1)
        out = T.segment_sum(msg, dst, n).reshape(n, self.dim)
        return out + self.bias


class StarGraphEncoder:
    """Two GAT layers (ELU between) followed by per-graph max-pooling."""

    def __init__(self, store: ParamStore, name, dim=128, heads=8):
        self.dim = dim
        self.layers = [GATLayer(store, f"{name}.gat{i}", dim, heads) for i in range(2)]

    def gat_forward(self, graphs):
        if isinstance(graphs, StarGraph):
            graphs = batch_from_graphs([graphs])
        if graphs.features.shape[1] != self.dim:
            raise ValueError(f"node features must be {self.dim}-d, got {graphs.features.shape[1]}")
        h = graphs.features
        h = T.elu(self.layers[0](h, graphs.src, graphs.dst))
        return self.layers[1](h, graphs.src, graphs.dst)

    @staticmethod
    def pool(node_features, graphs: BatchedStarGraphs):
        return T.segment_max(node_features, graphs.starts)

    def __call__(self, graphs):
        if isinstance(graphs, StarGraph):
            graphs = batch_from_graphs([graphs])
        return self.pool(self.gat_forward(graphs), graphs)
