"""Per-frame graph construction: star graphs and the distance-based baselines.

Neighbour sets follow the aggregation convention used by GraphConv:
``neighbors(i)`` lists the nodes whose features flow *into* node ``i``, so
the dense adjacency has ``A[i, j] = 1`` iff ``j`` is in ``neighbors(i)``.
They are stored row-compressed (``indptr``/``indices``), which is exactly the
CSR layout of that adjacency.

Star graphs put the centre at node 0 and the frame's points at 1..n.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .pointcloud import PointFrame, PointSequence, Point3


class GraphType(str, enum.Enum):
    DSTAR = "dstar"
    USTAR = "ustar"
    KNN = "knn"
    RADIUS = "radius"
    FC = "fc"
    EMPTY = "empty"

    @property
    def is_star(self) -> bool:
        return self in (GraphType.DSTAR, GraphType.USTAR)


class CenterKind(str, enum.Enum):
    STATIC = "static"
    MEAN = "mean"
    ZERO = "zero"


@dataclass(frozen=True)
class CenterMode:
    kind: CenterKind = CenterKind.STATIC
    point: tuple[float, float, float] = (0.0, 1.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "kind", CenterKind(self.kind))
        object.__setattr__(self, "point", tuple(float(c) for c in self.point))
        if len(self.point) != 3:
            raise ValueError("center point must have 3 coordinates")


@dataclass(frozen=True, eq=False)
class FrameGraph:
    nodes: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    has_center: bool = False

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 3)
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        n = len(nodes)
        if indptr.shape != (n + 1,) or indptr[0] != 0 or indptr[-1] != len(indices):
            raise ValueError("indptr does not match node count / indices length")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if len(indices) and (indices.min() < 0 or indices.max() >= n):
            raise ValueError("neighbour index out of range")
        rows = np.repeat(np.arange(n), np.diff(indptr))
        if np.any(rows == indices):
            raise ValueError("self-index in neighbour set")
        for arr in (nodes, indptr, indices):
            arr.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)

    @classmethod
    def _trusted(cls, nodes, indptr, indices, has_center=False) -> "FrameGraph":
        """Skip validation; for the builders below, which are correct by construction."""
        g = object.__new__(cls)
        for name, arr in (("nodes", nodes), ("indptr", indptr), ("indices", indices)):
            arr.flags.writeable = False
            object.__setattr__(g, name, arr)
        object.__setattr__(g, "has_center", has_center)
        return g

    @classmethod
    def from_neighbor_sets(cls, nodes, neighbor_sets: Sequence[Sequence[int]], has_center=False):
        indptr = np.zeros(len(neighbor_sets) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(s) for s in neighbor_sets])
        flat = [j for s in neighbor_sets for j in s]
        return cls(np.asarray(nodes, dtype=np.float64).reshape(-1, 3), indptr,
                   np.asarray(flat, dtype=np.int64), has_center)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.indices)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @property
    def neighbor_sets(self) -> list[tuple[int, ...]]:
        return [tuple(int(j) for j in self.neighbors(i)) for i in range(self.num_nodes)]

    def sparse_adjacency(self) -> sp.csr_matrix:
        n = self.num_nodes
        return sp.csr_matrix((np.ones(len(self.indices)), self.indices, self.indptr), shape=(n, n))

    def is_symmetric(self) -> bool:
        a = self.sparse_adjacency()
        return (a != a.T).nnz == 0


@dataclass(frozen=True)
class GraphSpec:
    """Graph type plus its construction parameters."""

    kind: GraphType = GraphType.DSTAR
    k: int = 5
    r: float = 0.5
    center: CenterMode = field(default_factory=CenterMode)

    def __post_init__(self):
        object.__setattr__(self, "kind", GraphType(self.kind))
        if self.kind is GraphType.KNN and self.k < 1:
            raise ValueError(f"knn requires k >= 1, got {self.k}")
        if self.kind is GraphType.RADIUS and not self.r > 0:
            raise ValueError(f"radius requires r > 0, got {self.r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "k": self.k, "r": self.r,
                "center": {"kind": self.center.kind.value, "point": list(self.center.point)}}

    @classmethod
    def from_dict(cls, d: dict) -> "GraphSpec":
        c = d.get("center", {})
        return cls(GraphType(d["kind"]), int(d.get("k", 5)), float(d.get("r", 0.5)),
                   CenterMode(CenterKind(c.get("kind", "static")), tuple(c.get("point", (0.0, 1.0, 0.0)))))


@dataclass(frozen=True)
class GraphSequence:
    graphs: tuple[FrameGraph, ...]
    label: int
    subject_id: int = 0
    spec: GraphSpec | None = None

    def __len__(self) -> int:
        return len(self.graphs)


def center_point(frame: PointFrame, mode: CenterMode = CenterMode()) -> Point3:
    if mode.kind is CenterKind.STATIC:
        return Point3(*mode.point)
    if mode.kind is CenterKind.ZERO or len(frame) == 0:
        return Point3(0.0, 0.0, 0.0)
    return Point3(*frame.as_array().mean(axis=0).tolist())


def _with_center(frame: PointFrame, center) -> np.ndarray:
    n = len(frame)
    nodes = np.empty((n + 1, 3))
    nodes[0] = center
    if n:
        nodes[1:] = frame.as_array()
    return nodes


def build_dstar(frame: PointFrame, center=Point3(0.0, 1.0, 0.0)) -> FrameGraph:
    """Directed star: every point receives from the centre, the centre receives nothing."""
    n = len(frame)
    indptr = np.concatenate(([0], np.arange(n + 1)))
    return FrameGraph._trusted(_with_center(frame, center), indptr, np.zeros(n, dtype=np.int64), True)


def build_ustar(frame: PointFrame, center=Point3(0.0, 1.0, 0.0)) -> FrameGraph:
    """Undirected star: as the directed one, plus the centre receives from every point."""
    n = len(frame)
    indptr = np.concatenate(([0], n + np.arange(n + 1)))
    indices = np.concatenate((np.arange(1, n + 1), np.zeros(n, dtype=np.int64)))
    return FrameGraph._trusted(_with_center(frame, center), indptr, indices, True)


def pairwise_distances(pts: np.ndarray) -> np.ndarray:
    """Brute-force Euclidean distance matrix, O(n^2)."""
    d2 = np.zeros((len(pts), len(pts)))
    for axis in range(pts.shape[1]):
        col = pts[:, axis]
        diff = col[:, None] - col[None, :]
        d2 += diff * diff
    return np.sqrt(d2, out=d2)


def build_knn(frame: PointFrame, k: int = 5) -> FrameGraph:
    """Each point receives from its min(k, n-1) nearest points.

    Neighbours are listed nearest first; equal distances are broken by lower index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = frame.as_array()
    n = len(pts)
    kk = min(k, n - 1)
    if kk <= 0:
        return FrameGraph._trusted(pts, np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    dist = pairwise_distances(pts)
    np.fill_diagonal(dist, np.inf)
    kth = np.partition(dist, kk - 1, axis=1)[:, kk - 1:kk]
    closer = dist < kth
    tied = dist == kth
    # fill the remaining slots with the lowest-index ties
    need = kk - closer.sum(axis=1, keepdims=True)
    chosen = closer | (tied & (np.cumsum(tied, axis=1) <= need))
    cols = np.nonzero(chosen)[1].reshape(n, kk)
    d = np.take_along_axis(dist, cols, axis=1)
    order = np.lexsort((cols, d), axis=-1)
    cols = np.take_along_axis(cols, order, axis=1)
    return FrameGraph._trusted(pts, np.arange(n + 1, dtype=np.int64) * kk, cols.ravel())


def build_radius(frame: PointFrame, r: float = 0.5) -> FrameGraph:
    """j feeds i iff i != j and their distance is at most r (symmetric)."""
    if not r > 0:
        raise ValueError("r must be > 0")
    pts = frame.as_array()
    n = len(pts)
    within = pairwise_distances(pts) <= r
    np.fill_diagonal(within, False)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(within.sum(axis=1), out=indptr[1:])
    return FrameGraph._trusted(pts, indptr, np.nonzero(within)[1])


def build_fc(frame: PointFrame) -> FrameGraph:
    """Every point receives from every other point."""
    pts = frame.as_array()
    n = len(pts)
    others = ~np.eye(n, dtype=bool)
    return FrameGraph._trusted(pts, np.arange(n + 1, dtype=np.int64) * max(n - 1, 0), np.nonzero(others)[1])


def build_empty(frame: PointFrame) -> FrameGraph:
    pts = frame.as_array()
    return FrameGraph._trusted(pts, np.zeros(len(pts) + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))


def adjacency_matrix(g: FrameGraph) -> np.ndarray:
    """Dense 0/1 adjacency, A[i, j] = 1 iff j feeds i."""
    return g.sparse_adjacency().toarray()


def graph_from_adjacency(nodes, adjacency: np.ndarray, has_center: bool = False) -> FrameGraph:
    a = sp.csr_matrix(np.asarray(adjacency) != 0)
    a.sort_indices()
    return FrameGraph(nodes, a.indptr, a.indices, has_center)


def build_frame_graph(frame: PointFrame, spec: GraphSpec) -> FrameGraph:
    kind = spec.kind
    if kind is GraphType.DSTAR:
        return build_dstar(frame, center_point(frame, spec.center))
    if kind is GraphType.USTAR:
        return build_ustar(frame, center_point(frame, spec.center))
    if kind is GraphType.KNN:
        return build_knn(frame, spec.k)
    if kind is GraphType.RADIUS:
        return build_radius(frame, spec.r)
    if kind is GraphType.FC:
        return build_fc(frame)
    return build_empty(frame)


def build_sequence(seq: PointSequence, spec: GraphSpec) -> GraphSequence:
    # GraphSpec validates k / r on construction, before any frame is touched
    spec = GraphSpec(spec.kind, spec.k, spec.r, spec.center)
    graphs = tuple(build_frame_graph(f, spec) for f in seq.frames)
    return GraphSequence(graphs, seq.label, seq.subject_id, spec)


def write_adjacency_csv(g: FrameGraph, path) -> None:
    np.savetxt(path, adjacency_matrix(g), fmt="%d", delimiter=",")
