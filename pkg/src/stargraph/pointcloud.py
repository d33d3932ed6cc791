"""Point-cloud frames and the per-frame preprocessing chain.

A frame is the variable-size set of radar detections at one timestamp.
Preprocessing keeps points inside a detection box, clusters the survivors
with DBSCAN and retains only the largest cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class PointFrame:
    points: tuple[Point3, ...] = ()
    timestamp_index: int = 0

    def __post_init__(self):
        pts = tuple(Point3(float(p[0]), float(p[1]), float(p[2])) for p in self.points)
        for p in pts:
            if not all(math.isfinite(c) for c in p):
                raise ValueError(f"non-finite point {p!r} in frame {self.timestamp_index}")
        if self.timestamp_index < 0:
            raise ValueError("timestamp_index must be >= 0")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        """Points as an (n, 3) float64 array."""
        if not self.points:
            return np.zeros((0, 3))
        return np.array(self.points, dtype=np.float64)

    def subset(self, indices: Iterable[int]) -> "PointFrame":
        return PointFrame(tuple(self.points[i] for i in indices), self.timestamp_index)

    @classmethod
    def from_array(cls, arr, timestamp_index: int = 0) -> "PointFrame":
        arr = np.asarray(arr, dtype=np.float64).reshape(-1, 3)
        return cls(tuple(Point3(*row) for row in arr.tolist()), timestamp_index)


@dataclass(frozen=True)
class PointSequence:
    frames: tuple[PointFrame, ...]
    label: int
    subject_id: int = 0

    def __post_init__(self):
        frames = tuple(self.frames)
        for i, f in enumerate(frames):
            if f.timestamp_index != i:
                raise ValueError(f"frame {i} has timestamp_index {f.timestamp_index}")
        if self.label < 0:
            raise ValueError("label must be >= 0")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @classmethod
    def from_arrays(cls, arrays: Sequence, label: int, subject_id: int = 0) -> "PointSequence":
        return cls(tuple(PointFrame.from_array(a, i) for i, a in enumerate(arrays)), label, subject_id)


@dataclass(frozen=True)
class RangeBounds:
    x_min: float = 0.5
    x_max: float = 5.0
    y_min: float = -1.2
    y_max: float = 6.5
    z_min: float = -1.0
    z_max: float = 2.5

    def __post_init__(self):
        for axis in "xyz":
            lo, hi = getattr(self, f"{axis}_min"), getattr(self, f"{axis}_max")
            if not lo < hi:
                raise ValueError(f"{axis}_min must be < {axis}_max (got {lo}, {hi})")

    def contains(self, p: Point3) -> bool:
        return (self.x_min <= p.x <= self.x_max
                and self.y_min <= p.y <= self.y_max
                and self.z_min <= p.z <= self.z_max)


DEFAULT_BOUNDS = RangeBounds()
DEFAULT_EPS = 0.35
DEFAULT_MIN_PTS = 2


def range_filter(frame: PointFrame, bounds: RangeBounds = DEFAULT_BOUNDS) -> PointFrame:
    """Keep points inside the detection box (bounds inclusive), order preserved."""
    return PointFrame(tuple(p for p in frame.points if bounds.contains(p)), frame.timestamp_index)


@dataclass
class Clustering:
    """DBSCAN output: clusters in discovery order, each a sorted index list."""

    clusters: list[list[int]] = field(default_factory=list)
    noise: list[int] = field(default_factory=list)

    def labels(self, n: int) -> list[int]:
        out = [-1] * n
        for cid, members in enumerate(self.clusters):
            for i in members:
                out[i] = cid
        return out


def dbscan(frame: PointFrame, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS) -> Clustering:
    """Density-based clustering with Euclidean distance.

    The eps-neighbourhood includes the point itself, so ``min_pts=2`` makes any
    point with one other point within ``eps`` a core point. Points are scanned in
    ascending index order; a border point reachable from several clusters joins
    the first cluster that reaches it.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = frame.as_array()
    n = len(pts)
    if n == 0:
        return Clustering()

    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    neighbours = [np.flatnonzero(row <= eps) for row in dist]
    is_core = [len(nb) >= min_pts for nb in neighbours]

    UNSEEN, NOISE = -2, -1
    labels = [UNSEEN] * n
    cid = -1
    for i in range(n):
        if labels[i] != UNSEEN:
            continue
        if not is_core[i]:
            labels[i] = NOISE
            continue
        cid += 1
        labels[i] = cid
        queue = list(neighbours[i])
        head = 0
        while head < len(queue):
            j = queue[head]
            head += 1
            if labels[j] == NOISE:
                labels[j] = cid
            if labels[j] != UNSEEN:
                continue
            labels[j] = cid
            if is_core[j]:
                queue.extend(neighbours[j])

    clusters: list[list[int]] = [[] for _ in range(cid + 1)]
    noise = []
    for i, lab in enumerate(labels):
        (noise if lab == NOISE else clusters[lab]).append(i)
    return Clustering(clusters, noise)


def largest_cluster(clustering: Clustering, frame: PointFrame) -> PointFrame:
    """Points of the biggest cluster; ties go to the cluster holding the lowest index."""
    if not clustering.clusters:
        return PointFrame((), frame.timestamp_index)
    best = min(clustering.clusters, key=lambda c: (-len(c), c[0]))
    return frame.subset(sorted(best))


def preprocess_frame(frame: PointFrame, bounds: RangeBounds = DEFAULT_BOUNDS,
                     eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS) -> PointFrame:
    kept = range_filter(frame, bounds)
    return largest_cluster(dbscan(kept, eps, min_pts), kept)


def preprocess_sequence(raw: PointSequence, bounds: RangeBounds = DEFAULT_BOUNDS,
                        eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS) -> PointSequence:
    """Apply range filter, DBSCAN and largest-cluster selection to every frame.

    Frames that end up empty are kept so the sequence length never changes.
    """
    frames = tuple(preprocess_frame(f, bounds, eps, min_pts) for f in raw.frames)
    return PointSequence(frames, raw.label, raw.subject_id)
