"""Undirected association graphs and their matrix derivations.

A Graph is immutable after construction: a sorted (i < j) edge array plus
per-node neighbor lists, with optional node features, labels, and
train/val/test masks.  Self-loops are never stored; the +I used by the
symmetric normalization is applied inside normalized_adjacency only.
"""

from __future__ import annotations

import numpy as np

DENSE_CAP = 4096


class GraphError(ValueError):
    pass


class Graph:
    __slots__ = ("n", "edges", "_neighbors", "features", "labels", "masks", "_hash")

    def __init__(self, n, edges, features=None, labels=None, masks=None):
        self.n = int(n)
        edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
        if len(edges):
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            if lo.min() < 0 or hi.max() >= self.n:
                raise GraphError(f"edge endpoint out of range for n={self.n}")
            if np.any(lo == hi):
                raise GraphError("self-loop in edge list")
            edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
        else:
            edges = np.zeros((0, 2), dtype=np.intp)
        self.edges = edges
        self.edges.setflags(write=False)
        nbrs = [[] for _ in range(self.n)]
        for i, j in edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        self._neighbors = [np.array(sorted(v), dtype=np.intp) for v in nbrs]
        if features is not None:
            features = np.asarray(features, dtype=np.float64)
            if features.shape[0] != self.n:
                raise GraphError(f"features row count {features.shape[0]} != n={self.n}")
        self.features = features
        if labels is not None:
            labels = np.asarray(labels, dtype=np.intp)
            if labels.shape != (self.n,):
                raise GraphError(f"labels length {labels.shape} != n={self.n}")
        self.labels = labels
        if masks is not None:
            masks = {k: np.asarray(v, dtype=bool) for k, v in masks.items()}
            total = np.zeros(self.n, dtype=int)
            for k, v in masks.items():
                if v.shape != (self.n,):
                    raise GraphError(f"mask {k!r} length mismatch")
                total += v
            if total.max() > 1:
                raise GraphError("masks overlap")
        self.masks = masks

    @property
    def n_edges(self):
        return len(self.edges)

    def neighbors(self, v):
        if not 0 <= v < self.n:
            raise GraphError(f"node {v} out of range for n={self.n}")
        return self._neighbors[v]

    def degrees(self):
        deg = np.zeros(self.n, dtype=np.intp)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self, cap=DENSE_CAP):
        if self.n > cap:
            raise GraphError(f"dense adjacency refused for n={self.n} > cap={cap}")
        a = np.zeros((self.n, self.n))
        if len(self.edges):
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def with_data(self, features=None, labels=None, masks=None):
        """Copy of this graph's structure with data fields replaced."""
        return Graph(self.n, self.edges,
                     features=self.features if features is None else features,
                     labels=self.labels if labels is None else labels,
                     masks=self.masks if masks is None else masks)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.edges, other.edges)

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            self._hash = hash((self.n, self.edges.tobytes()))
            return self._hash

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.n_edges})"


def from_edge_list(pairs, n):
    """Build a Graph from (i, j) pairs; duplicates and orientations collapse."""
    return Graph(n, np.asarray(list(pairs), dtype=np.intp).reshape(-1, 2))


def degree_matrix(g):
    return g.degrees()


def laplacian(g):
    """L = D - A as a dense matrix."""
    a = g.adjacency()
    return np.diag(g.degrees().astype(np.float64)) - a


def normalized_adjacency(g):
    """Symmetric normalization D~^{-1/2} (A + I) D~^{-1/2}."""
    a = g.adjacency() + np.eye(g.n)
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


def mean_aggregation_matrix(g):
    """Row-normalized adjacency D^{-1} A; isolated nodes get a zero row."""
    a = g.adjacency()
    deg = a.sum(axis=1)
    with np.errstate(divide="ignore"):
        dinv = np.where(deg > 0, 1.0 / deg, 0.0)
    return a * dinv[:, None]


def permute(g, perm):
    """Relabel nodes by a bijection perm: old index -> new index."""
    perm = np.asarray(perm, dtype=np.intp)
    if perm.shape != (g.n,) or not np.array_equal(np.sort(perm), np.arange(g.n)):
        raise GraphError("perm is not a bijection on [0, n)")
    edges = perm[g.edges] if len(g.edges) else g.edges
    inv = np.empty_like(perm)
    inv[perm] = np.arange(g.n)
    features = g.features[inv] if g.features is not None else None
    labels = g.labels[inv] if g.labels is not None else None
    masks = {k: v[inv] for k, v in g.masks.items()} if g.masks is not None else None
    return Graph(g.n, edges, features=features, labels=labels, masks=masks)


def write_edge_list(path, g):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# nodes {g.n}\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")


def read_edge_list(path, n=None):
    """Read the one-edge-per-line text format; '#' lines are comments."""
    pairs = []
    max_node = -1
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphError(f"malformed edge line: {line!r}")
            i, j = int(parts[0]), int(parts[1])
            max_node = max(max_node, i, j)
            pairs.append((i, j))
    if n is None:
        n = max_node + 1
    return from_edge_list(pairs, n)
