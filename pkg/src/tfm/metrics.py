"""Evaluation metrics: three-way EPE, bucket-normalized EPE, and
supervision-stability statistics.

All flows are residual (ego-motion removed) in meters per frame interval.
Points outside the square evaluation region around the sensor are excluded
before any statistic is computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frames import FlowField

CLASS_NAMES = ("BACKGROUND", "CAR", "OTHER", "PED", "VRU")
BACKGROUND, CAR, OTHER, PED, VRU = range(5)
FOREGROUND_CLASSES = (CAR, OTHER, PED, VRU)

DEFAULT_BUCKETS = ((0.05, 0.5), (0.5, 1.0), (1.0, 2.0), (2.0, math.inf))

ZERO_DIRECTION_ANGLE_DEG = 90.0  # convention for directionless targets
_ZERO_NORM = 1e-9


@dataclass(frozen=True)
class EvalConfig:
    """Thresholds, region, and speed buckets (m per frame).

    The bucket boundaries are artifact defaults, not values restated by any
    benchmark; reports carry ``official_buckets`` so downstream consumers can
    tell. Buckets are (lower, upper] and must be non-overlapping and
    covering above the dynamic threshold.
    """

    dynamic_threshold: float = 0.05
    eval_region_half_extent: float = 35.0
    speed_buckets: tuple = DEFAULT_BUCKETS
    official_buckets: bool = False

    def __post_init__(self):
        if not self.dynamic_threshold > 0 or not self.eval_region_half_extent > 0:
            raise ValueError("thresholds must be positive")
        buckets = tuple((float(lo), float(hi)) for lo, hi in self.speed_buckets)
        for lo, hi in buckets:
            if not hi > lo:
                raise ValueError(f"empty speed bucket ({lo}, {hi}]")
        for (_, hi_prev), (lo_next, _) in zip(buckets, buckets[1:]):
            if lo_next != hi_prev:
                raise ValueError("speed buckets must be contiguous and non-overlapping")
        object.__setattr__(self, "speed_buckets", buckets)


def _norms(vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
    return np.sqrt((v[:, 0] * v[:, 0] + v[:, 1] * v[:, 1]) + v[:, 2] * v[:, 2])


def _mean(values: np.ndarray) -> float:
    return float(np.cumsum(values)[-1]) / len(values)


def _region_mask(points: np.ndarray, half_extent: float) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return (np.abs(pts[:, 0]) <= half_extent) & (np.abs(pts[:, 1]) <= half_extent)


def _flow_array(flow) -> np.ndarray:
    if isinstance(flow, FlowField):
        return flow.flow
    return np.asarray(flow, dtype=np.float64).reshape(-1, 3)


def threeway_epe(points, pred, gt, gt_dynamic_mask, foreground_mask,
                 config: EvalConfig = EvalConfig()) -> dict:
    """Mean endpoint error split into foreground-dynamic (FD),
    foreground-static (FS), and background-static (BS) categories.

    Empty categories are reported as None and excluded from the unweighted
    mean. Background-dynamic points are evaluated in no category.
    """
    pred_f = _flow_array(pred)
    gt_f = _flow_array(gt)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    dyn = np.asarray(gt_dynamic_mask, dtype=bool).reshape(-1)
    fg = np.asarray(foreground_mask, dtype=bool).reshape(-1)
    if not (len(pred_f) == len(gt_f) == len(dyn) == len(fg) == n):
        raise ValueError("points, flows, and masks must have equal lengths")
    region = _region_mask(pts, config.eval_region_half_extent)
    epe = _norms(pred_f - gt_f)
    categories = {
        "FD": region & fg & dyn,
        "FS": region & fg & ~dyn,
        "BS": region & ~fg & ~dyn,
    }
    out = {"counts": {}}
    present = []
    for name, mask in categories.items():
        count = int(mask.sum())
        out["counts"][name] = count
        if count:
            value = _mean(epe[mask])
            out[name] = value
            present.append(value)
        else:
            out[name] = None
    out["mean"] = _mean(np.array(present)) if present else None
    return out


def bucket_normalized_epe(points, pred, gt, class_labels,
                          config: EvalConfig = EvalConfig()) -> dict:
    """EPE normalized by mean ground-truth speed within class/speed buckets.

    Only dynamic points (gt speed above the threshold) participate. Each
    class scores the mean over its non-empty buckets; the overall score is
    the mean over the present foreground classes. A prediction of zero
    residual flow everywhere scores exactly 1.0 in every populated bucket.
    """
    pred_f = _flow_array(pred)
    gt_f = _flow_array(gt)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(class_labels, dtype=np.int64).reshape(-1)
    if not (len(pred_f) == len(gt_f) == len(labels) == len(pts)):
        raise ValueError("points, flows, and labels must have equal lengths")
    region = _region_mask(pts, config.eval_region_half_extent)
    speed = _norms(gt_f)
    epe = _norms(pred_f - gt_f)
    eligible = region & (speed > config.dynamic_threshold)
    per_class = {}
    per_bucket = {}
    present = []
    for cls in FOREGROUND_CLASSES:
        name = CLASS_NAMES[cls]
        cls_mask = eligible & (labels == cls)
        scores = []
        buckets = {}
        for lo, hi in config.speed_buckets:
            mask = cls_mask & (speed > lo) & (speed <= hi)
            if not mask.any():
                continue
            ratio = _mean(epe[mask]) / _mean(speed[mask])
            buckets[f"({lo}, {hi}]"] = {"score": ratio, "count": int(mask.sum())}
            scores.append(ratio)
        per_bucket[name] = buckets
        if scores:
            value = _mean(np.array(scores))
            per_class[name] = value
            present.append(value)
        else:
            per_class[name] = None
    mean = _mean(np.array(present)) if present else None
    return {"mean": mean, "per_class": per_class, "buckets": per_bucket,
            "official_buckets": config.official_buckets}


def angle_between_deg(a, b) -> float:
    """Angle between two vectors in degrees; 90 by convention if either is
    (numerically) zero-length."""
    a = np.asarray(a, dtype=np.float64).reshape(3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    na = math.sqrt((a[0] * a[0] + a[1] * a[1]) + a[2] * a[2])
    nb = math.sqrt((b[0] * b[0] + b[1] * b[1]) + b[2] * b[2])
    if na < _ZERO_NORM or nb < _ZERO_NORM:
        return ZERO_DIRECTION_ANGLE_DEG
    cos = float(np.dot(a, b)) / (na * nb)
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def supervision_stability(targets, gt_directions=None) -> dict:
    """Temporal stability of a tracked cluster's supervision targets.

    ``targets``: (T, 3) per-frame target flow for one cluster. Successive
    change is the angle between consecutive targets; with ``gt_directions``
    (T, 3) given, the mean angular error to the true direction is also
    reported. Zero-norm targets contribute 90 degrees to both statistics.
    """
    tgt = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(tgt) < 2:
        raise ValueError("need at least two targets for stability statistics")
    changes = [angle_between_deg(tgt[i], tgt[i + 1]) for i in range(len(tgt) - 1)]
    out = {
        "mean_successive_change_deg": _mean(np.array(changes)),
        "successive_change_deg": changes,
    }
    if gt_directions is not None:
        gt = np.asarray(gt_directions, dtype=np.float64).reshape(-1, 3)
        if len(gt) != len(tgt):
            raise ValueError("gt_directions length must match targets")
        errors = [angle_between_deg(tgt[i], gt[i]) for i in range(len(tgt))]
        out["mean_error_to_gt_deg"] = _mean(np.array(errors))
        out["error_to_gt_deg"] = errors
    return out


def metric_report(points, pred, gt, class_labels, config: EvalConfig = EvalConfig(),
                  gt_dynamic_mask=None) -> dict:
    """Full report: three-way EPE plus bucket-normalized EPE.

    The dynamic mask defaults to gt speed above the threshold; foreground is
    any non-background class label.
    """
    labels = np.asarray(class_labels, dtype=np.int64).reshape(-1)
    gt_f = _flow_array(gt)
    if gt_dynamic_mask is None:
        gt_dynamic_mask = _norms(gt_f) > config.dynamic_threshold
    foreground = labels != BACKGROUND
    return {
        "schema_version": 1,
        "threeway": threeway_epe(points, pred, gt, gt_dynamic_mask, foreground, config),
        "bucket_normalized": bucket_normalized_epe(points, pred, gt, labels, config),
    }
