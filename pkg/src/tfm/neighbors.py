"""Exact nearest-neighbor queries over fixed point sets.

Built on a k-d tree but with determinism guarantees the raw tree does not
give: duplicate rows are collapsed to their lowest original index before
indexing, squared distances are recomputed in a fixed (dx*dx+dy*dy)+dz*dz
order, and exact distance ties between distinct rows fall back to a linear
scan so the winner is always the lowest point index. Results are therefore
independent of build-time ordering and of batch vs sequential execution.
"""

from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .geometry import as_points


def worker_count() -> int:
    """Thread cap from TFM_THREADS; 0 or unset means auto (all cores)."""
    raw = os.environ.get("TFM_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        return -1
    return n if n > 0 else -1


def squared_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Canonical squared distances |p - q|^2, accumulated x, y, then z."""
    d = points - q
    return (d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2]


class NNResult(NamedTuple):
    index: int
    point: np.ndarray
    sq_distance: float


class NearestNeighborIndex:
    """Immutable exact-NN structure over a fixed point list."""

    def __init__(self, points):
        pts = as_points(points)
        if len(pts) == 0:
            raise ValueError("empty index")
        if not np.all(np.isfinite(pts)):
            raise ValueError("index points must be finite")
        self._points = pts
        # Collapse duplicate rows; each unique row represents its lowest
        # original index so tie-breaks among duplicates are free.
        unique, inverse = np.unique(pts, axis=0, return_inverse=True)
        rep = np.full(len(unique), len(pts), dtype=np.int64)
        np.minimum.at(rep, inverse, np.arange(len(pts), dtype=np.int64))
        self._unique = unique
        self._rep = rep
        self._tree = cKDTree(unique)

    def __len__(self) -> int:
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def nearest(self, q) -> NNResult:
        idx, pt, sq = self.nearest_batch(np.asarray(q, dtype=np.float64).reshape(1, 3))
        return NNResult(int(idx[0]), pt[0], float(sq[0]))

    def nearest_batch(self, qs):
        """Vectorized nearest(): returns (indices, points, squared distances).

        Result i depends only on qs[i]; identical to a sequential loop.
        """
        queries = as_points(qs)
        n_unique = len(self._unique)
        k = min(2, n_unique)
        dist, uidx = self._tree.query(queries, k=k, workers=worker_count())
        if k == 1:
            winners = np.asarray(uidx, dtype=np.int64).reshape(-1)
        else:
            winners = uidx[:, 0].astype(np.int64)
            # Exact float tie between two distinct rows: resolve by scan.
            tied = dist[:, 0] == dist[:, 1]
            for qi in np.nonzero(tied)[0]:
                winners[qi] = self._scan_winner(queries[qi])
        indices = self._rep[winners]
        # Canonical squared distance, recomputed per query against the winner.
        diff = self._unique[winners] - queries
        sq = (diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]) + diff[:, 2] * diff[:, 2]
        return indices, self._points[indices], sq

    def _scan_winner(self, q: np.ndarray) -> int:
        sq = squared_distances(self._unique, q)
        best = sq.min()
        # Lowest original index among all rows achieving the minimum.
        return int(np.nonzero(sq == best)[0][np.argmin(self._rep[sq == best])])


def build(points) -> NearestNeighborIndex:
    return NearestNeighborIndex(points)


def neighbor_pairs(points, radius: float) -> np.ndarray:
    """All index pairs (i, j), i < j, with |p_i - p_j| <= radius."""
    pts = as_points(points)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    return pairs
