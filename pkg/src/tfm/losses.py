"""Self-supervised loss terms, their sum, and the analytic gradient.

Three terms: a dynamic cluster loss (point-level mean plus cluster-level
mean of per-cluster means, so small objects are not drowned out by large
ones), a static loss penalizing residual flow on static points, and a
geometric consistency loss built from symmetric truncated Chamfer distances
between flow-warped source points and neighbor frames.

Gradients treat supervision targets as constants and freeze Chamfer
correspondences (and their clamp state) at the current flow, which makes
the frozen objective a smooth quadratic; that is the function whose
analytic gradient is returned and which the finite-difference tests probe.

Within every component, sums accumulate in a fixed left-to-right order so
parallel callers can be checked bit-for-bit against sequential evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .frames import FlowField, FrameWindow, STATIC_LABEL, require_valid
from .neighbors import NearestNeighborIndex
from .segmentation import ClusterSet

DCLS_MODES = ("both", "point_only", "cluster_only")


@dataclass(frozen=True)
class LossConfig:
    enable_dynamic: bool = True
    enable_static: bool = True
    enable_geometric: bool = True
    dcls_mode: str = "both"
    chamfer_truncation: float = 2.0

    def __post_init__(self):
        if self.dcls_mode not in DCLS_MODES:
            raise ValueError(f"dcls_mode must be one of {DCLS_MODES}")
        if not self.chamfer_truncation > 0:
            raise ValueError("chamfer_truncation must be positive")


@dataclass(frozen=True)
class LossReport:
    """Scalar loss terms (m^2) plus a per-cluster error breakdown.

    Disabled or mode-excluded terms are reported as 0, so
    ``total == dcls_total + static_loss + geom_loss`` holds exactly and
    ``dcls_total == dcls_point_level + dcls_cluster_level`` likewise.
    """

    dcls_point_level: float
    dcls_cluster_level: float
    dcls_total: float
    static_loss: float
    geom_loss: float
    total: float
    per_cluster: dict
    enabled: dict
    dcls_mode: str = "both"

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "dcls_point_level": self.dcls_point_level,
            "dcls_cluster_level": self.dcls_cluster_level,
            "dcls_total": self.dcls_total,
            "static_loss": self.static_loss,
            "geom_loss": self.geom_loss,
            "total": self.total,
            "dcls_mode": self.dcls_mode,
            "enabled": dict(self.enabled),
            "per_cluster": [
                {"cluster_id": int(cid), "mean_sq_error": float(v)}
                for cid, v in sorted(self.per_cluster.items())
            ],
        }


def _sq_norms(vectors: np.ndarray) -> np.ndarray:
    return (vectors[:, 0] * vectors[:, 0] + vectors[:, 1] * vectors[:, 1]) \
        + vectors[:, 2] * vectors[:, 2]


def _seq_sum(values: np.ndarray) -> float:
    if len(values) == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def dynamic_cluster_loss(flow: FlowField, clusters: ClusterSet, targets: dict):
    """Point-level and cluster-level squared-error terms against the targets.

    Point level averages over all clustered points together; cluster level
    averages each cluster's own mean, so a 5-point pedestrian weighs as much
    as a 5000-point bus. Returns ``(point_level, cluster_level, per_cluster)``.
    """
    ordered = sorted(clusters.clusters, key=lambda c: c.cluster_id)
    if not ordered:
        return 0.0, 0.0, {}
    total_points = 0
    sums = []
    per_cluster = {}
    for cluster in ordered:
        if cluster.cluster_id not in targets:
            raise ValueError(f"no supervision target for cluster {cluster.cluster_id}")
        residual = flow.flow[cluster.point_indices] - np.asarray(targets[cluster.cluster_id],
                                                                 dtype=np.float64).reshape(3)
        sq = _sq_norms(residual)
        cluster_sum = _seq_sum(sq)
        sums.append(cluster_sum)
        per_cluster[cluster.cluster_id] = cluster_sum / len(cluster)
        total_points += len(cluster)
    point_level = _seq_sum(np.array(sums)) / total_points
    means = np.array([per_cluster[c.cluster_id] for c in ordered])
    cluster_level = _seq_sum(means) / len(ordered)
    return point_level, cluster_level, per_cluster


def static_loss(flow: FlowField, static_indices) -> float:
    """Mean squared residual flow over static points; 0 when there are none."""
    idx = np.asarray(static_indices, dtype=np.int64).reshape(-1)
    if len(idx) == 0:
        return 0.0
    return _seq_sum(_sq_norms(flow.flow[idx])) / len(idx)


@dataclass(frozen=True)
class _ChamferDirection:
    """One direction of one Chamfer comparison, frozen at a base flow.

    ``rows[k] == -1`` marks a pair whose moving-side point carries no flow
    (static points in the full-cloud comparison); those contribute constants.
    Pairs clamped at the base flow contribute the constant truncation^2.
    """

    base: np.ndarray      # (k, 3) unwarped moving-side points
    rows: np.ndarray      # (k,) flow row index or -1
    anchors: np.ndarray   # (k, 3) fixed other-side points
    clamped: np.ndarray   # (k,) bool, state at the base flow
    scale: float          # warp multiplier t' - t
    coefficient: float    # weight of each pair's term in the final value


@dataclass(frozen=True)
class GeomCorrespondences:
    """Frozen Chamfer correspondences; a smooth quadratic in the flow."""

    directions: tuple
    truncation: float

    def evaluate(self, flow: FlowField) -> float:
        total = 0.0
        tsq = self.truncation * self.truncation
        for d in self.directions:
            moved = d.base.copy()
            carry = d.rows >= 0
            moved[carry] += d.scale * flow.flow[d.rows[carry]]
            sq = _sq_norms(moved - d.anchors)
            sq = np.where(d.clamped, tsq, sq)
            total += d.coefficient * _seq_sum(sq)
        return total

    def gradient(self, flow: FlowField) -> np.ndarray:
        grad = np.zeros_like(flow.flow)
        for d in self.directions:
            live = (d.rows >= 0) & ~d.clamped
            if not np.any(live):
                continue
            rows = d.rows[live]
            moved = d.base[live] + d.scale * flow.flow[rows]
            contrib = (2.0 * d.scale * d.coefficient) * (moved - d.anchors[live])
            np.add.at(grad, rows, contrib)
        return grad


def _direction(base, rows, fixed_cloud, flow, scale, coefficient, truncation):
    """Freeze one Chamfer direction: moving side (base + scale*flow[rows])
    queried against an index over ``fixed_cloud``."""
    moved = base.copy()
    carry = rows >= 0
    moved[carry] += scale * flow.flow[rows[carry]]
    index = NearestNeighborIndex(fixed_cloud)
    _, anchors, sq = index.nearest_batch(moved)
    clamped = sq > truncation * truncation
    return _ChamferDirection(base=base, rows=rows, anchors=anchors, clamped=clamped,
                             scale=scale, coefficient=coefficient)


def _reverse_direction(fixed_cloud, base, rows, flow, scale, coefficient, truncation):
    """Freeze the reverse direction: each fixed point matched to its nearest
    moving-side point; gradients flow to the matched rows."""
    moved = base.copy()
    carry = rows >= 0
    moved[carry] += scale * flow.flow[rows[carry]]
    index = NearestNeighborIndex(moved)
    matched, _, sq = index.nearest_batch(fixed_cloud)
    clamped = sq > truncation * truncation
    return _ChamferDirection(base=base[matched], rows=rows[matched], anchors=fixed_cloud,
                             clamped=clamped, scale=scale, coefficient=coefficient)


def freeze_correspondences(flow: FlowField, window: FrameWindow,
                           truncation: float = 2.0) -> GeomCorrespondences:
    """Establish all Chamfer correspondences and clamp states at ``flow``.

    Two components, averaged: (1) per neighbor frame, symmetric truncated
    Chamfer between source dynamic points warped by (t'-t)*flow and that
    frame's dynamic points, averaged over frames (frames without dynamic
    points are skipped); (2) one full-cloud Chamfer between the source frame
    warped toward t+1 (flow applied to dynamic points only) and the target
    frame. Each direction's mean carries weight 0.5 within its Chamfer.
    """
    require_valid(window)
    source = window.source
    dyn_rows = np.nonzero(source.labels != STATIC_LABEL)[0].astype(np.int64)
    dyn_points = source.points[dyn_rows]

    frames_with_dyn = []
    for offset in window.neighbor_offsets():
        frame = window.frame_at_offset(offset)
        other_dyn = frame.points[frame.labels != STATIC_LABEL]
        if len(other_dyn):
            frames_with_dyn.append((offset, other_dyn))

    component_plans = []  # list of per-component direction plans
    if len(dyn_rows) and frames_with_dyn:
        component_plans.append(("dynamic", frames_with_dyn))
    target = window.target
    if len(source) and len(target):
        component_plans.append(("full", None))
    if not component_plans:
        return GeomCorrespondences((), truncation)

    comp_w = 1.0 / len(component_plans)
    directions = []
    for kind, payload in component_plans:
        if kind == "dynamic":
            frame_w = 1.0 / len(payload)
            for offset, other_dyn in payload:
                scale = float(offset)
                base_coeff = comp_w * frame_w * 0.5
                directions.append(_direction(
                    dyn_points, dyn_rows, other_dyn, flow, scale,
                    base_coeff / len(dyn_points), truncation))
                directions.append(_reverse_direction(
                    other_dyn, dyn_points, dyn_rows, flow, scale,
                    base_coeff / len(other_dyn), truncation))
        else:
            rows = np.where(source.labels != STATIC_LABEL,
                            np.arange(len(source), dtype=np.int64), -1)
            base_coeff = comp_w * 0.5
            directions.append(_direction(
                source.points, rows, target.points, flow, 1.0,
                base_coeff / len(source), truncation))
            directions.append(_reverse_direction(
                target.points, source.points, rows, flow, 1.0,
                base_coeff / len(target), truncation))
    return GeomCorrespondences(tuple(directions), truncation)


def geometric_loss(flow: FlowField, window: FrameWindow, truncation: float = 2.0) -> float:
    """Geometric consistency loss at ``flow`` (correspondences re-established)."""
    return freeze_correspondences(flow, window, truncation).evaluate(flow)


def geometric_components(flow: FlowField, window: FrameWindow,
                         truncation: float = 2.0) -> dict:
    """Diagnostic breakdown: dynamic multi-frame component, full-cloud
    component, and per-frame Chamfer values (all at re-established
    correspondences)."""
    require_valid(window)
    source = window.source
    dyn_rows = np.nonzero(source.labels != STATIC_LABEL)[0].astype(np.int64)
    dyn_points = source.points[dyn_rows]
    tsq = truncation * truncation

    def chamfer(moving_base, rows, scale, fixed_cloud):
        moved = moving_base.copy()
        carry = rows >= 0
        moved[carry] += scale * flow.flow[rows[carry]]
        fwd = NearestNeighborIndex(fixed_cloud).nearest_batch(moved)[2]
        bwd = NearestNeighborIndex(moved).nearest_batch(fixed_cloud)[2]
        fwd_mean = _seq_sum(np.minimum(fwd, tsq)) / len(moved)
        bwd_mean = _seq_sum(np.minimum(bwd, tsq)) / len(fixed_cloud)
        return 0.5 * (fwd_mean + bwd_mean)

    per_frame = {}
    dynamic_component = None
    if len(dyn_rows):
        values = []
        for offset in window.neighbor_offsets():
            frame = window.frame_at_offset(offset)
            other_dyn = frame.points[frame.labels != STATIC_LABEL]
            if len(other_dyn) == 0:
                continue
            value = chamfer(dyn_points, dyn_rows, float(offset), other_dyn)
            per_frame[offset] = value
            values.append(value)
        if values:
            dynamic_component = _seq_sum(np.array(values)) / len(values)

    full_component = None
    if len(source) and len(window.target):
        rows = np.where(source.labels != STATIC_LABEL,
                        np.arange(len(source), dtype=np.int64), -1)
        full_component = chamfer(source.points, rows, 1.0, window.target.points)

    present = [v for v in (dynamic_component, full_component) if v is not None]
    total = _seq_sum(np.array(present)) / len(present) if present else 0.0
    return {"dynamic_component": dynamic_component, "full_component": full_component,
            "per_frame": per_frame, "total": total}


def total_loss(flow: FlowField, window: FrameWindow, clusters: ClusterSet,
               targets: dict, config: LossConfig = LossConfig()) -> LossReport:
    """Evaluate every enabled term; disabled terms contribute exact zeros."""
    require_valid(window)
    point_level = cluster_level = 0.0
    per_cluster = {}
    if config.enable_dynamic and len(clusters.clusters):
        point_level, cluster_level, per_cluster = dynamic_cluster_loss(flow, clusters, targets)
        if config.dcls_mode == "point_only":
            cluster_level = 0.0
        elif config.dcls_mode == "cluster_only":
            point_level = 0.0
    dcls_total = point_level + cluster_level

    static_value = 0.0
    if config.enable_static:
        static_idx = np.nonzero(window.source.labels == STATIC_LABEL)[0]
        static_value = static_loss(flow, static_idx)

    geom_value = 0.0
    if config.enable_geometric:
        geom_value = geometric_loss(flow, window, config.chamfer_truncation)

    return LossReport(
        dcls_point_level=point_level,
        dcls_cluster_level=cluster_level,
        dcls_total=dcls_total,
        static_loss=static_value,
        geom_loss=geom_value,
        total=dcls_total + static_value + geom_value,
        per_cluster=per_cluster,
        enabled={"dynamic": config.enable_dynamic, "static": config.enable_static,
                 "geometric": config.enable_geometric},
        dcls_mode=config.dcls_mode,
    )


def loss_gradient(flow: FlowField, window: FrameWindow, clusters: ClusterSet,
                  targets: dict, config: LossConfig = LossConfig(),
                  frozen: Optional[GeomCorrespondences] = None) -> np.ndarray:
    """Analytic gradient of the total loss with targets held constant and
    Chamfer correspondences frozen (at ``flow`` unless ``frozen`` is given)."""
    require_valid(window)
    grad = np.zeros_like(flow.flow)

    if config.enable_dynamic and len(clusters.clusters):
        total_points = sum(len(c) for c in clusters.clusters)
        n_clusters = len(clusters.clusters)
        use_point = config.dcls_mode in ("both", "point_only")
        use_cluster = config.dcls_mode in ("both", "cluster_only")
        for cluster in clusters.clusters:
            if cluster.cluster_id not in targets:
                raise ValueError(f"no supervision target for cluster {cluster.cluster_id}")
            residual = flow.flow[cluster.point_indices] - np.asarray(
                targets[cluster.cluster_id], dtype=np.float64).reshape(3)
            coeff = 0.0
            if use_point:
                coeff += 2.0 / total_points
            if use_cluster:
                coeff += 2.0 / (n_clusters * len(cluster))
            grad[cluster.point_indices] += coeff * residual

    if config.enable_static:
        static_idx = np.nonzero(window.source.labels == STATIC_LABEL)[0]
        if len(static_idx):
            grad[static_idx] += (2.0 / len(static_idx)) * flow.flow[static_idx]

    if config.enable_geometric:
        if frozen is None:
            frozen = freeze_correspondences(flow, window, config.chamfer_truncation)
        grad += frozen.gradient(flow)

    return grad


def total_loss_frozen(flow: FlowField, window: FrameWindow, clusters: ClusterSet,
                      targets: dict, config: LossConfig,
                      frozen: GeomCorrespondences) -> float:
    """Total loss with the geometric term evaluated on frozen correspondences.

    This is the smooth function whose exact gradient ``loss_gradient``
    returns; finite-difference checks difference this, not the re-matching
    loss."""
    point_level = cluster_level = 0.0
    if config.enable_dynamic and len(clusters.clusters):
        point_level, cluster_level, _ = dynamic_cluster_loss(flow, clusters, targets)
        if config.dcls_mode == "point_only":
            cluster_level = 0.0
        elif config.dcls_mode == "cluster_only":
            point_level = 0.0
    value = point_level + cluster_level
    if config.enable_static:
        static_idx = np.nonzero(window.source.labels == STATIC_LABEL)[0]
        value += static_loss(flow, static_idx)
    if config.enable_geometric:
        value += frozen.evaluate(flow)
    return value
