"""Per-cluster motion candidate pools, consensus voting, and aggregation.

Each dynamic cluster gets a supervision target mined from a pool of motion
hypotheses: the cluster mean of the current flow estimate (the internal
candidate, an anchor in the model's own state) plus, for every neighbor
frame, the top-K largest nearest-neighbor displacements normalized by the
temporal gap (external candidates, geometric evidence). A binary
directional-agreement matrix and magnitude/recency reliability weights pick
a winner by total supporter weight; the target is the weighted mean of the
winner's supporters.

Bit-reproducibility contract: the voting stage is checked against a naive
scalar oracle for exact double-precision equality, so its arithmetic order
is fixed and documented. Squared norms are (x*x + y*y) + z*z, dot products
(xa*xb + ya*yb) + za*zb, gamma^m goes through libm pow, every
candidate-indexed reduction accumulates left-to-right in pool order (the
last element of a cumulative sum), and the aggregation denominator is the
winner's score, not a recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .frames import FlowField, FrameWindow, STATIC_LABEL, require_valid
from .geometry import readonly_view
from .neighbors import NearestNeighborIndex
from .segmentation import ClusterSet, DynamicCluster

INTERNAL = "internal"
EXTERNAL = "external"


@dataclass(frozen=True)
class EnsemblingConfig:
    """Voting hyperparameters and ablation switches.

    Defaults: cosine threshold 0.7071 (45 degrees), top_k 5, temporal decay
    0.9. ``zero_norm_eps`` is the norm below which a candidate is treated as
    directionless: its cosine against anything else is defined as 0, so it
    agrees only with itself for any non-negative threshold.
    """

    tau_cos: float = 0.7071
    top_k: int = 5
    gamma: float = 0.9
    zero_norm_eps: float = 1e-6
    use_consensus_matrix: bool = True
    use_reliability_weights: bool = True
    use_aggregation: bool = True

    def __post_init__(self):
        if not -1.0 <= self.tau_cos <= 1.0:
            raise ValueError("tau_cos must lie in [-1, 1]")
        if self.top_k < 0:
            raise ValueError("top_k must be non-negative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not self.zero_norm_eps > 0:
            raise ValueError("zero_norm_eps must be positive")


@dataclass(frozen=True)
class MotionCandidate:
    """One 3-D motion hypothesis (meters per frame interval)."""

    vector: np.ndarray
    time_offset: int  # 0 for internal, |t' - t| for external
    source_kind: str = INTERNAL
    frame_offset: Optional[int] = None  # t' - t, external only
    rank: Optional[int] = None  # 0-based rank within its frame, external only

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(v)):
            raise ValueError("candidate vector must be finite")
        if self.time_offset < 0:
            raise ValueError("time_offset must be non-negative")
        object.__setattr__(self, "vector", readonly_view(v))


@dataclass(frozen=True)
class CandidatePool:
    """Ordered candidates for one cluster: internal first, then externals
    grouped by frame (most recent first), rank ascending within a frame."""

    cluster_id: int
    candidates: tuple
    skipped_frame_offsets: tuple = ()  # frames that had no dynamic points

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "skipped_frame_offsets", tuple(self.skipped_frame_offsets))

    def __len__(self) -> int:
        return len(self.candidates)

    def vectors(self) -> np.ndarray:
        return np.array([c.vector for c in self.candidates], dtype=np.float64).reshape(-1, 3)

    def time_offsets(self) -> np.ndarray:
        return np.array([c.time_offset for c in self.candidates], dtype=np.int64)


@dataclass(frozen=True)
class ConsensusResult:
    """Voting outcome: agreement matrix, weights, scores, winner, target."""

    matrix: np.ndarray  # (n, n) bool, the effective matrix used
    weights: np.ndarray  # (n,) the effective weights used
    scores: np.ndarray  # (n,) scores[i] = sum_b matrix[i, b] * weights[b]
    winner: int
    target: np.ndarray  # (3,) aggregated supervision flow
    supporters: np.ndarray  # indices b with matrix[winner, b]


@dataclass(frozen=True)
class ClusterSupervision:
    """Mined supervision for one cluster, with full diagnostics retained."""

    pool: CandidatePool
    consensus: ConsensusResult

    @property
    def target(self) -> np.ndarray:
        return self.consensus.target


def _seq_sum(terms: np.ndarray, axis: int = 0) -> np.ndarray:
    """Strictly left-to-right sum along ``axis`` (last element of cumsum)."""
    return np.cumsum(terms, axis=axis).take(-1, axis=axis)


def _squared_norms(vectors: np.ndarray) -> np.ndarray:
    x, y, z = vectors[:, 0], vectors[:, 1], vectors[:, 2]
    return (x * x + y * y) + z * z


def internal_candidate(cluster: DynamicCluster, flow: FlowField) -> MotionCandidate:
    """Cluster mean of the current per-point flow estimate."""
    if len(cluster) == 0:
        raise ValueError("cluster is empty")
    rows = flow.flow[cluster.point_indices]
    mean = _seq_sum(rows, axis=0) / float(len(rows))
    return MotionCandidate(mean, time_offset=0, source_kind=INTERNAL)


def external_candidates(cluster: DynamicCluster, window: FrameWindow, top_k: int,
                        nn_cache: Optional[dict] = None,
                        frame_offsets: Optional[list] = None):
    """Geometric motion hypotheses from neighbor frames.

    For each neighbor frame t' (offset in ``frame_offsets``, canonical order
    by default): find each cluster point's nearest neighbor among that
    frame's dynamic points, rank correspondences by raw displacement
    magnitude (descending, ties by lower point index), keep the top
    min(top_k, |cluster|), and emit (nn - p) / (t' - t) with time offset
    |t' - t|. Frames without dynamic points contribute nothing and are
    recorded as skipped.

    Returns ``(candidates, skipped_frame_offsets)``.
    """
    offsets = window.neighbor_offsets() if frame_offsets is None else list(frame_offsets)
    source_points = window.source.points[cluster.point_indices]
    candidates = []
    skipped = []
    for offset in offsets:
        frame = window.frame_at_offset(offset)
        index = None
        if nn_cache is not None and offset in nn_cache:
            index = nn_cache[offset]
        else:
            dyn = frame.points[frame.labels != STATIC_LABEL]
            if len(dyn):
                index = NearestNeighborIndex(dyn)
            if nn_cache is not None:
                nn_cache[offset] = index
        if index is None:
            skipped.append(offset)
            continue
        if top_k == 0:
            continue
        _, nn_points, sq = index.nearest_batch(source_points)
        displacement = nn_points - source_points
        magnitude = np.sqrt(sq)
        # Stable sort on -magnitude: ties fall back to ascending position,
        # i.e. the lower frame point index (point_indices are ascending).
        order = np.argsort(-magnitude, kind="stable")[:min(top_k, len(source_points))]
        for rank, pos in enumerate(order):
            vector = displacement[pos] / float(offset)
            candidates.append(MotionCandidate(vector, time_offset=abs(offset),
                                              source_kind=EXTERNAL,
                                              frame_offset=offset, rank=rank))
    return candidates, skipped


def build_pool(cluster: DynamicCluster, window: FrameWindow, flow: FlowField,
               config: EnsemblingConfig, nn_cache: Optional[dict] = None,
               frame_offsets: Optional[list] = None) -> CandidatePool:
    """Internal candidate followed by external candidates in canonical order."""
    internal = internal_candidate(cluster, flow)
    externals, skipped = external_candidates(cluster, window, config.top_k,
                                             nn_cache=nn_cache, frame_offsets=frame_offsets)
    return CandidatePool(cluster.cluster_id, (internal, *externals), tuple(skipped))


def consensus_matrix(pool, tau_cos: float, zero_norm_eps: float = 1e-6) -> np.ndarray:
    """Binary directional-agreement matrix: 1 iff cosine similarity > tau.

    Candidates with norm below ``zero_norm_eps`` have cosine 0 against
    everything, so they agree only with themselves (the forced unit
    diagonal) for any tau >= 0. Symmetric by construction.
    """
    vectors = pool.vectors() if isinstance(pool, CandidatePool) else np.asarray(pool, dtype=np.float64)
    x, y, z = vectors[:, 0], vectors[:, 1], vectors[:, 2]
    norms = np.sqrt((x * x + y * y) + z * z)
    dots = (x[:, None] * x[None, :] + y[:, None] * y[None, :]) + z[:, None] * z[None, :]
    denom = norms[:, None] * norms[None, :]
    small = norms < zero_norm_eps
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = dots / denom
    cos[small[:, None] | small[None, :]] = 0.0
    matrix = cos > tau_cos
    np.fill_diagonal(matrix, True)
    return matrix


def reliability_weights(pool, gamma: float) -> np.ndarray:
    """Per-candidate trust: gamma^m * (1 + |f|^2).

    Recency (small time offset m) and clear motion (large magnitude) both
    raise a candidate's influence.
    """
    if isinstance(pool, CandidatePool):
        vectors, offsets = pool.vectors(), pool.time_offsets()
    else:
        vectors, offsets = pool
        vectors = np.asarray(vectors, dtype=np.float64)
        offsets = np.asarray(offsets, dtype=np.int64)
    nsq = _squared_norms(vectors)
    return np.power(gamma, offsets.astype(np.float64)) * (1.0 + nsq)


def vote_and_aggregate(pool: CandidatePool, config: EnsemblingConfig) -> ConsensusResult:
    """Score candidates by total supporter weight and aggregate the winner's
    supporters into the supervision target.

    Ablations: without the consensus matrix all candidates support everyone
    (all-ones matrix); without reliability weights all weights are 1; without
    aggregation the target is the winner's vector verbatim. Argmax ties break
    to the lowest pool index, so the internal candidate wins total ties.
    """
    if len(pool) == 0:
        raise ValueError("empty candidate pool")
    vectors = pool.vectors()
    n = len(vectors)
    if config.use_consensus_matrix:
        matrix = consensus_matrix(vectors, config.tau_cos, config.zero_norm_eps)
    else:
        matrix = np.ones((n, n), dtype=bool)
    if config.use_reliability_weights:
        weights = reliability_weights((vectors, pool.time_offsets()), config.gamma)
    else:
        weights = np.ones(n, dtype=np.float64)
    scores = _seq_sum(np.where(matrix, weights, 0.0), axis=1)
    winner = int(np.argmax(scores))
    supporters = np.nonzero(matrix[winner])[0]
    if config.use_aggregation:
        masked = np.where(matrix[winner], weights, 0.0)
        numerator = _seq_sum(masked[:, None] * vectors, axis=0)
        target = numerator / scores[winner]
    else:
        target = vectors[winner].copy()
    return ConsensusResult(matrix=matrix, weights=weights, scores=scores,
                           winner=winner, target=target, supporters=supporters)


def neighbor_index_cache(window: FrameWindow, frame_offsets=None) -> dict:
    """Pre-build NN indices over each neighbor frame's dynamic points.

    Shared read-only across clusters; frames with no dynamic points map to
    None.
    """
    offsets = window.neighbor_offsets() if frame_offsets is None else list(frame_offsets)
    cache = {}
    for offset in offsets:
        frame = window.frame_at_offset(offset)
        dyn = frame.points[frame.labels != STATIC_LABEL]
        cache[offset] = NearestNeighborIndex(dyn) if len(dyn) else None
    return cache


def mine_supervision(window: FrameWindow, flow: FlowField, config: EnsemblingConfig,
                     candidate_frames: str = "all") -> dict:
    """Mine one supervision target per dynamic cluster of the source frame.

    ``candidate_frames``: "all" uses the whole window; "future_only"
    restricts external candidates to the target frame t+1 (the degraded
    two-frame construction used as a baseline by the fitter).

    Returns ``{cluster_id: ClusterSupervision}`` in ascending id order.
    Clusters always yield a target: the internal candidate exists even when
    every neighbor frame is empty.
    """
    require_valid(window)
    source = window.source
    if len(flow) != len(source):
        raise ValueError(f"flow has {len(flow)} rows for {len(source)} source points")
    if candidate_frames == "all":
        offsets = window.neighbor_offsets()
    elif candidate_frames == "future_only":
        offsets = [1]
    else:
        raise ValueError(f"unknown candidate_frames mode: {candidate_frames!r}")
    clusters = ClusterSet.from_frame(source)
    cache = neighbor_index_cache(window, offsets)
    mined = {}
    for cluster in clusters.clusters:
        pool = build_pool(cluster, window, flow, config, nn_cache=cache,
                          frame_offsets=offsets)
        mined[cluster.cluster_id] = ClusterSupervision(pool, vote_and_aggregate(pool, config))
    return mined


def targets_of(mined: dict) -> dict:
    """Extract {cluster_id: target vector} from mine_supervision output."""
    return {cid: sup.target for cid, sup in mined.items()}
