"""Static/dynamic masks and dynamic-point clustering.

Real-data runs are expected to ingest externally produced masks and cluster
ids; the heuristic mask and the fixed-radius Euclidean clustering here are
deterministic stand-ins good enough for synthetic scenes and demos.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import Frame, FrameWindow, Diagnostic, NOISE_LABEL, STATIC_LABEL, require_valid
from .geometry import readonly_view
from .neighbors import NearestNeighborIndex, neighbor_pairs


@dataclass(frozen=True)
class DynamicCluster:
    cluster_id: int
    point_indices: np.ndarray  # ascending indices into the source frame
    centroid: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.point_indices, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "point_indices", readonly_view(idx))
        object.__setattr__(self, "centroid", np.asarray(self.centroid, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.point_indices)


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple
    noise: np.ndarray  # indices of dynamic points in no cluster

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        noise = np.asarray(self.noise, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "noise", readonly_view(noise))

    def __len__(self) -> int:
        return len(self.clusters)

    def by_id(self) -> dict:
        return {c.cluster_id: c for c in self.clusters}

    @classmethod
    def from_frame(cls, frame: Frame) -> "ClusterSet":
        """Group a frame's labeled dynamic points by cluster id."""
        labels = frame.labels
        clusters = []
        for cid in np.unique(labels[labels >= 0]):
            idx = np.nonzero(labels == cid)[0].astype(np.int64)
            clusters.append(DynamicCluster(int(cid), idx, frame.points[idx].mean(axis=0)))
        noise = np.nonzero(labels == NOISE_LABEL)[0].astype(np.int64)
        return cls(tuple(clusters), noise)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)

    def find(self, i: int) -> int:
        parent = self.parent
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:  # path compression
            parent[i], i = root, parent[i]
        return root

    def union(self, i: int, j: int):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            # Attach the larger root id under the smaller so roots stay stable.
            if ri < rj:
                self.parent[rj] = ri
            else:
                self.parent[ri] = rj


def euclidean_cluster(points, eps: float, min_cluster_size: int = 5) -> ClusterSet:
    """Connected components of the eps-neighborhood graph (distance <= eps).

    Components smaller than ``min_cluster_size`` go to noise. Cluster ids are
    assigned in order of each component's smallest contained point index, so
    the labeling is permutation-invariant up to that rule.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_cluster_size < 1:
        raise ValueError("min_cluster_size must be >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return ClusterSet((), np.zeros(0, dtype=np.int64))
    uf = _UnionFind(n)
    for i, j in neighbor_pairs(pts, eps):
        uf.union(int(i), int(j))
    roots = np.array([uf.find(i) for i in range(n)], dtype=np.int64)
    clusters = []
    noise = []
    # Iterating unique roots in ascending order is exactly "smallest contained
    # point index" order, because union() keeps the smallest member as root.
    for root in np.unique(roots):
        members = np.nonzero(roots == root)[0].astype(np.int64)
        if len(members) >= min_cluster_size:
            clusters.append(DynamicCluster(len(clusters), members, pts[members].mean(axis=0)))
        else:
            noise.append(members)
    noise_idx = np.sort(np.concatenate(noise)) if noise else np.zeros(0, dtype=np.int64)
    return ClusterSet(tuple(clusters), noise_idx)


def heuristic_dynamic_mask(window: FrameWindow, motion_threshold: float) -> np.ndarray:
    """Mark source points whose ego-aligned NN displacement to the target
    frame exceeds ``motion_threshold``.

    A stand-in for occupancy-based segmentation: with ego motion already
    compensated in the window, static structure coincides across frames, so
    only genuinely moving points show large displacements.
    """
    if not motion_threshold > 0:
        raise ValueError("motion_threshold must be positive")
    require_valid(window)
    source = window.source
    target = window.target
    if len(target) == 0 or len(source) == 0:
        return np.zeros(len(source), dtype=bool)
    index = NearestNeighborIndex(target.points)
    _, _, sq = index.nearest_batch(source.points)
    return sq > motion_threshold * motion_threshold


def ingest_labels(window: FrameWindow, dynamic_masks, cluster_ids=None):
    """Attach externally computed per-frame labels to a window.

    ``dynamic_masks``: one boolean array per frame. ``cluster_ids``: optional,
    one int array per frame (< 0 meaning unclustered); ids on static-masked
    points are dropped with a diagnostic rather than violating the invariant
    that cluster ids exist only on dynamic points.

    Returns ``(window, diagnostics)``; raises on length mismatches.
    """
    if len(dynamic_masks) != len(window.frames):
        raise ValueError(f"got {len(dynamic_masks)} mask arrays for {len(window.frames)} frames")
    if cluster_ids is not None and len(cluster_ids) != len(window.frames):
        raise ValueError(f"got {len(cluster_ids)} cluster arrays for {len(window.frames)} frames")
    diags = []
    new_frames = []
    for i, frame in enumerate(window.frames):
        mask = np.asarray(dynamic_masks[i], dtype=bool).reshape(-1)
        if len(mask) != len(frame):
            raise ValueError(f"frame {frame.timestamp_index}: mask length {len(mask)} "
                             f"does not match point count {len(frame)}")
        cid = None
        if cluster_ids is not None and cluster_ids[i] is not None:
            cid = np.asarray(cluster_ids[i], dtype=np.int32).reshape(-1)
            if len(cid) != len(frame):
                raise ValueError(f"frame {frame.timestamp_index}: cluster id length {len(cid)} "
                                 f"does not match point count {len(frame)}")
            dropped = np.nonzero((cid >= 0) & ~mask)[0]
            if len(dropped):
                diags.append(Diagnostic(
                    "cluster-id-on-static",
                    f"frame {frame.timestamp_index}: {len(dropped)} cluster ids on "
                    f"static points dropped (first at point {int(dropped[0])})",
                    frame_index=i, point_index=int(dropped[0])))
                cid = cid.copy()
                cid[dropped] = STATIC_LABEL
        new_frames.append(Frame.from_masks(frame.timestamp_index, frame.points, mask, cid))
    new_window = FrameWindow(tuple(new_frames), window.source_index, window.ego_transforms)
    require_valid(new_window)
    return new_window, diags
