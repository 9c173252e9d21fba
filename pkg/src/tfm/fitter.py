"""Direct flow-field optimization against the total loss.

A desk-scale stand-in for training a network: the flow is a free parameter
(per point, or one rigid translation per cluster) descended with fixed-step
gradient descent. Supervision targets are re-mined every iteration from the
current flow, exercising the stop-gradient treatment honestly, and Chamfer
correspondences are re-frozen alongside.

Two supervision modes: ``multi_frame`` mines candidates from the full
window; ``two_frame`` restricts external candidates to the target frame
t+1, emulating prior two-frame objectives for A/B comparisons. The
comparison is qualitative-directional only; the two-frame mode is not a
reimplementation of any published method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensembling import EnsemblingConfig, mine_supervision, targets_of
from .frames import FlowField, FrameWindow, require_valid
from .losses import (LossConfig, freeze_correspondences, loss_gradient, total_loss,
                     total_loss_frozen)
from .segmentation import ClusterSet

PARAMETERIZATIONS = ("per_point", "per_cluster_translation")
SUPERVISION_MODES = ("multi_frame", "two_frame")


@dataclass(frozen=True)
class FitConfig:
    parameterization: str = "per_cluster_translation"
    step_size: float = 0.1
    momentum: float = 0.0
    max_iterations: int = 500
    tolerance: float = 1e-9  # stop when the total loss decrease falls below
    supervision: str = "multi_frame"
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if self.supervision not in SUPERVISION_MODES:
            raise ValueError(f"supervision must be one of {SUPERVISION_MODES}")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class FitTrace:
    """Per-iteration record: the loss right after re-mining targets (before
    the step), the frozen-objective loss after the step, and the per-cluster
    mean flow after the step (for direction-error plots)."""

    iterations: list = field(default_factory=list)
    stop_reason: str = "max_iterations"

    def append(self, iteration: int, report, loss_after_step: float,
               cluster_means: dict):
        self.iterations.append({
            "iteration": iteration,
            "loss_after_remine": report.to_dict(),
            "loss_after_step": loss_after_step,
            "cluster_means": [
                {"cluster_id": int(cid), "mean": cluster_means[cid].tolist()}
                for cid in sorted(cluster_means)
            ],
        })

    def totals(self) -> list:
        return [entry["loss_after_remine"]["total"] for entry in self.iterations]

    def to_dict(self) -> dict:
        return {"schema_version": 1, "stop_reason": self.stop_reason,
                "iterations": self.iterations}


class FitDivergence(RuntimeError):
    def __init__(self, message: str, trace: FitTrace):
        super().__init__(message)
        self.trace = trace


def two_frame_baseline_targets(window: FrameWindow, flow: FlowField,
                               config: EnsemblingConfig) -> dict:
    """Per-cluster supervision mined from frame t+1 only.

    Same interface as full mining; when the object is absent at t+1 the pool
    collapses to the internal candidate, i.e. the model's own estimate — the
    failure mode the multi-frame construction exists to avoid.
    """
    return mine_supervision(window, flow, config, candidate_frames="future_only")


def mine_targets(window: FrameWindow, flow: FlowField, config: EnsemblingConfig,
                 supervision: str = "multi_frame") -> dict:
    if supervision == "multi_frame":
        return mine_supervision(window, flow, config)
    return two_frame_baseline_targets(window, flow, config)


def _materialize(clusters: ClusterSet, translations: np.ndarray, n_points: int) -> FlowField:
    flow = np.zeros((n_points, 3))
    for j, cluster in enumerate(clusters.clusters):
        flow[cluster.point_indices] = translations[j]
    return FlowField(flow)


def fit(window: FrameWindow, initial_flow: FlowField = None,
        config: FitConfig = FitConfig(),
        ensembling: EnsemblingConfig = EnsemblingConfig(),
        loss: LossConfig = LossConfig()):
    """Optimize the source frame's flow field; returns (FlowField, FitTrace).

    Each iteration re-mines supervision targets from the current flow,
    freezes Chamfer correspondences, takes one gradient step, and records
    both the post-remine loss and the post-step frozen loss. Stops at the
    iteration cap, or when the post-remine total loss decrease drops below
    the tolerance. Raises FitDivergence (with the trace attached) if the
    loss exceeds the divergence limit.
    """
    require_valid(window)
    source = window.source
    clusters = ClusterSet.from_frame(source)
    n = len(source)

    if initial_flow is None:
        flow = FlowField.zeros(n)
    else:
        if len(initial_flow) != n:
            raise ValueError(f"initial flow has {len(initial_flow)} rows for {n} points")
        flow = initial_flow

    per_cluster = config.parameterization == "per_cluster_translation"
    if per_cluster:
        translations = np.array([
            flow.flow[c.point_indices].mean(axis=0) for c in clusters.clusters
        ]).reshape(len(clusters.clusters), 3)
        flow = _materialize(clusters, translations, n)
        velocity = np.zeros_like(translations)
    else:
        velocity = np.zeros((n, 3))

    trace = FitTrace()
    previous_total = None
    for iteration in range(config.max_iterations):
        mined = mine_targets(window, flow, ensembling, config.supervision)
        targets = targets_of(mined)
        frozen = None
        if loss.enable_geometric:
            frozen = freeze_correspondences(flow, window, loss.chamfer_truncation)
        report = total_loss(flow, window, clusters, targets, loss)
        if not np.isfinite(report.total) or report.total > config.divergence_limit:
            trace.stop_reason = "diverged"
            raise FitDivergence(
                f"loss diverged to {report.total:.3e} at iteration {iteration}", trace)

        grad = loss_gradient(flow, window, clusters, targets, loss, frozen=frozen)
        if per_cluster:
            cluster_grad = np.array([
                grad[c.point_indices].sum(axis=0) for c in clusters.clusters
            ]).reshape(len(clusters.clusters), 3)
            velocity = config.momentum * velocity - config.step_size * cluster_grad
            translations = translations + velocity
            flow = _materialize(clusters, translations, n)
        else:
            velocity = config.momentum * velocity - config.step_size * grad
            flow = FlowField(flow.flow + velocity)

        after_step = total_loss_frozen(flow, window, clusters, targets, loss,
                                       frozen) if frozen is not None else \
            total_loss(flow, window, clusters, targets, loss).total
        trace.append(iteration, report, float(after_step),
                     fitted_translations(flow, clusters))

        if previous_total is not None and abs(previous_total - report.total) < config.tolerance:
            trace.stop_reason = "tolerance"
            break
        previous_total = report.total

    return flow, trace


def fitted_translations(flow: FlowField, clusters: ClusterSet) -> dict:
    """Per-cluster mean flow of a fitted field: {cluster_id: (3,) vector}."""
    return {c.cluster_id: flow.flow[c.point_indices].mean(axis=0)
            for c in clusters.clusters}
