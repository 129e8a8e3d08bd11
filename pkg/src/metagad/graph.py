"""Attributed graph container, GCN normalisation, node splits and file I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    ConfigError,
    FeatureValidationError,
    GraphFormatError,
    NodeIndexError,
)


def _canonical_edges(n, pairs):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if np.any(pairs < 0) or np.any(pairs >= n):
        bad = pairs[(pairs < 0).any(1) | (pairs >= n).any(1)][0]
        raise NodeIndexError(f"edge {tuple(bad)} out of range for n={n}")
    if np.any(pairs[:, 0] == pairs[:, 1]):
        i = int(pairs[pairs[:, 0] == pairs[:, 1]][0, 0])
        raise GraphFormatError(f"self-loop on node {i} is not allowed")
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    # np.unique on the row view sorts lexicographically by (lo, hi)
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Undirected graph with a dense node-feature matrix.

    ``edges`` holds every undirected edge exactly once as ``(i, j)`` with
    ``i < j``, sorted lexicographically. Use :meth:`from_edges` to build one
    from arbitrary (possibly duplicated or reversed) pairs.
    """

    n: int
    edges: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        edges = _canonical_edges(self.n, self.edges)
        if edges.shape[0] != np.asarray(self.edges).reshape(-1, 2).shape[0]:
            raise GraphFormatError("edges must be unique and canonical; use from_edges")
        x = np.array(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.n:
            raise FeatureValidationError(
                f"features must have shape ({self.n}, d), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise FeatureValidationError("features contain non-finite values")
        edges.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", x)

    @classmethod
    def from_edges(cls, n, pairs, features):
        return cls(int(n), _canonical_edges(int(n), pairs), features)

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def m(self):
        """Number of undirected edges."""
        return self.edges.shape[0]

    def adjacency(self):
        """Symmetric 0/1 adjacency in CSR form with sorted column indices."""
        e = self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.n, self.n))
        a.sum_duplicates()
        a.sort_indices()
        return a

    def degrees(self):
        deg = np.zeros(self.n, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def with_features(self, features):
        return AttributedGraph(self.n, self.edges, features)

    def with_extra_edges(self, pairs):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return AttributedGraph.from_edges(self.n, np.vstack([self.edges, pairs]), self.features)

    def stats(self):
        # both conventions are reported; public copies of e.g. Cora disagree
        return {
            "nodes": self.n,
            "undirected_edges": self.m,
            "directed_edges": 2 * self.m,
            "attributes": self.d,
        }


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` stored as CSR with sorted indices."""

    matrix: sp.csr_matrix
    self_loop_degree: np.ndarray

    @property
    def n(self):
        return self.matrix.shape[0]

    def __matmul__(self, other):
        return self.matrix @ other

    def toarray(self):
        return self.matrix.toarray()


def normalize_adjacency(g: AttributedGraph) -> NormalizedAdjacency:
    a = g.adjacency() + sp.identity(g.n, format="csr")
    a = sp.csr_matrix(a)
    a.sort_indices()
    deg = np.asarray(a.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    rows = np.repeat(np.arange(g.n), np.diff(a.indptr))
    # the product of two floats commutes, so (i, j) and (j, i) are bitwise equal
    data = dinv[rows] * dinv[a.indices]
    norm = sp.csr_matrix((data, a.indices.copy(), a.indptr.copy()), shape=a.shape)
    deg.flags.writeable = False
    return NormalizedAdjacency(norm, deg)


@dataclass(frozen=True)
class NodeSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = np.sort(np.asarray(getattr(self, name), dtype=np.int64))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        allidx = np.concatenate([self.train, self.val, self.test])
        if np.unique(allidx).size != allidx.size:
            raise ConfigError("split sets overlap")

    @property
    def n(self):
        return self.train.size + self.val.size + self.test.size

    def sizes(self):
        return self.train.size, self.val.size, self.test.size

    def to_dict(self):
        return {
            "seed": self.seed,
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["train"], dtype=np.int64), np.array(d["val"], dtype=np.int64),
                   np.array(d["test"], dtype=np.int64), d.get("seed"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def split_nodes(g, ratios=(0.8, 0.1, 0.1), seed=0) -> NodeSplit:
    """Random train/val/test partition.

    Train and validation sizes are ``floor(ratio * n)``; test takes the
    remainder. ``g`` may be a graph or a node count.
    """
    n = g if isinstance(g, (int, np.integer)) else g.n
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(ratios[0] * n)
    n_val = math.floor(ratios[1] * n)
    return NodeSplit(perm[:n_train], perm[n_train:n_train + n_val],
                     perm[n_train + n_val:], seed)


# --------------------------------------------------------------------------- I/O

def _read_edges(path):
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise GraphFormatError("expected two node ids", path, lineno)
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"non-integer node id in {line.strip()!r}",
                                       path, lineno) from None
            if i == j:
                raise GraphFormatError(f"self-loop on node {i}", path, lineno)
            if i < 0 or j < 0:
                raise NodeIndexError(f"negative node id in {line.strip()!r}", path, lineno)
            pairs.append((i, j, lineno))
    return pairs


def _read_features(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError:
                raise GraphFormatError("unparseable feature value", path, lineno) from None
            if not all(math.isfinite(v) for v in row):
                raise FeatureValidationError("non-finite feature value", path, lineno)
            if rows and len(row) != len(rows[0]):
                raise GraphFormatError(
                    f"expected {len(rows[0])} columns, got {len(row)}", path, lineno)
            rows.append(row)
    if not rows:
        raise GraphFormatError("feature file is empty", path)
    return np.array(rows, dtype=np.float64)


def load_graph(edge_path, feature_path) -> AttributedGraph:
    """Read a whitespace edge list and a feature CSV (one row per node)."""
    x = _read_features(feature_path)
    n = x.shape[0]
    pairs = _read_edges(edge_path)
    for i, j, lineno in pairs:
        if i >= n or j >= n:
            raise NodeIndexError(f"node id {max(i, j)} >= n={n}", edge_path, lineno)
    arr = np.array([(i, j) for i, j, _ in pairs], dtype=np.int64).reshape(-1, 2)
    return AttributedGraph.from_edges(n, arr, x)


def save_graph(g: AttributedGraph, edge_path, feature_path):
    with open(edge_path, "w") as fh:
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")
    np.savetxt(feature_path, g.features, delimiter=",", fmt="%.17g")


def load_label_file(path, n=None):
    """Anomaly ids, one per line (for datasets with organic anomalies)."""
    ids = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                i = int(s)
            except ValueError:
                raise GraphFormatError(f"bad node id {s!r}", path, lineno) from None
            if i < 0 or (n is not None and i >= n):
                raise NodeIndexError(f"node id {i} out of range", path, lineno)
            ids.append(i)
    return np.unique(np.array(ids, dtype=np.int64))
