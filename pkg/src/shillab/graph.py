"""User-item bipartite graph and parameter-free propagation of item features."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError


def _matrix_of(view):
    return getattr(view, "matrix", view)


def normalized_adjacency(view):
    """Symmetric ``D^-1/2 A D^-1/2`` over users followed by items.

    Node ``u`` is user ``u``; node ``n_users + i`` is item ``i``. Isolated nodes
    have all-zero rows.
    """
    y = _matrix_of(view)
    n, m = y.shape
    r = y.to_csr()
    a = sp.bmat([[None, r], [r.T, None]], format="csr", dtype=np.float64)
    if a.shape != (n + m, n + m):
        a = sp.csr_matrix((n + m, n + m), dtype=np.float64) + a
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    adj = (d @ a @ d).tocsr()
    adj.sort_indices()
    return adj


@dataclass
class BipartiteGraph:
    n_users: int
    n_items: int
    adj: sp.csr_matrix

    @classmethod
    def build(cls, view):
        y = _matrix_of(view)
        adj = normalized_adjacency(y)
        asym = abs(adj - adj.T)
        if asym.nnz and asym.max() != 0:
            raise AssertionError("normalized adjacency is not symmetric")
        return cls(y.n_users, y.n_items, adj)

    @property
    def n_nodes(self):
        return self.n_users + self.n_items

    @property
    def n_edges(self):
        return self.adj.nnz // 2

    def neighbors(self, node):
        return self.adj.indices[self.adj.indptr[node]:self.adj.indptr[node + 1]]


def propagate(graph, feats, layers):
    """Mean of ``feats, A feats, ..., A^L feats`` (no weights, no nonlinearity)."""
    adj = graph.adj if isinstance(graph, BipartiteGraph) else graph
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[0] != adj.shape[0]:
        raise DimensionError(f"features have {feats.shape[0]} rows, graph has {adj.shape[0]} nodes")
    if layers < 0:
        raise ValueError("layer count must be non-negative")
    if layers == 0:
        return feats.copy()
    acc = feats.copy()
    cur = feats
    for _ in range(layers):
        cur = adj @ cur
        acc += cur
    return acc / (layers + 1)


def init_item_embeddings(user_feats, view):
    """Each item's feature is the mean of its interacting users' features (zero if none)."""
    y = _matrix_of(view)
    user_feats = np.asarray(user_feats, dtype=np.float64)
    if user_feats.ndim != 2 or user_feats.shape[0] != y.n_users:
        raise DimensionError(f"user features of shape {user_feats.shape} do not match {y.n_users} users")
    r = y.to_csr()
    counts = y.item_counts().astype(np.float64)
    sums = r.T @ user_feats
    out = np.zeros((y.n_items, user_feats.shape[1]))
    seen = counts > 0
    out[seen] = sums[seen] / counts[seen, None]
    return out


class GraphEncoder:
    """Frozen item-feature table for target conditioning.

    User features come from the pretrained profile encoder; items start at the
    mean of their users and the stacked table is propagated ``layers`` times.
    """

    def __init__(self, graph, user_feats, item_feats, layers=2):
        if layers not in (0, 1, 2, 3):
            raise ValueError(f"layer count {layers} outside {{0, 1, 2, 3}}")
        user_feats = np.asarray(user_feats, dtype=np.float64)
        item_feats = np.asarray(item_feats, dtype=np.float64)
        if user_feats.shape[1] != item_feats.shape[1]:
            raise DimensionError(f"user width {user_feats.shape[1]} != item width {item_feats.shape[1]}")
        self.graph = graph
        self.layers = layers
        self.width = user_feats.shape[1]
        out = propagate(graph, np.vstack([user_feats, item_feats]), layers)
        self.user_table = out[:graph.n_users]
        self.item_table = out[graph.n_users:]
        self.item_table.flags.writeable = False

    @classmethod
    def from_view(cls, view, user_feats, layers=2):
        graph = BipartiteGraph.build(view)
        return cls(graph, user_feats, init_item_embeddings(user_feats, view), layers)

    @property
    def n_items(self):
        return self.item_table.shape[0]

    def target_feature(self, t):
        t = int(t)
        if not 0 <= t < self.n_items:
            raise IndexError(f"item {t} outside [0, {self.n_items})")
        return self.item_table[t].copy()

    def target_features(self, targets):
        targets = np.asarray(targets, dtype=np.int64)
        if targets.size and (targets.min() < 0 or targets.max() >= self.n_items):
            raise IndexError(f"target outside [0, {self.n_items})")
        return self.item_table[targets]

    def export_csv(self, path):
        with open(path, "w") as fh:
            fh.write("item," + ",".join(f"f{k}" for k in range(self.width)) + "\n")
            for i, row in enumerate(self.item_table):
                fh.write(f"{i}," + ",".join(repr(float(x)) for x in row) + "\n")
