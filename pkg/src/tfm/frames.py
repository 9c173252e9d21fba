"""Frames, multi-frame windows, flow fields, and structural validation.

Per-point labels use one int32 per point: ``-1`` static, ``-2`` dynamic but
unclustered (noise), ``>= 0`` dynamic cluster id. This matches the on-disk
label encoding, so frames round-trip through archives without remapping.

A :class:`FrameWindow` always holds geometry already expressed in the target
frame's (index t+1) coordinates; ``ego_transforms[i]`` records the transform
that was applied to frame i's raw sensor coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import RigidTransform, as_points, readonly_view

STATIC_LABEL = -1
NOISE_LABEL = -2


@dataclass(frozen=True)
class Frame:
    """One LiDAR sweep: points plus per-point dynamic/cluster labels."""

    timestamp_index: int
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = as_points(self.points)
        lab = np.asarray(self.labels, dtype=np.int32).reshape(-1)
        object.__setattr__(self, "points", readonly_view(pts))
        object.__setattr__(self, "labels", readonly_view(lab))

    @classmethod
    def from_masks(cls, timestamp_index: int, points, dynamic_mask=None,
                   cluster_ids=None) -> "Frame":
        """Build labels from a boolean mask and optional per-point cluster ids.

        ``cluster_ids`` entries < 0 (or missing) on dynamic points become noise.
        """
        pts = as_points(points)
        n = len(pts)
        labels = np.full(n, STATIC_LABEL, dtype=np.int32)
        if dynamic_mask is not None:
            mask = np.asarray(dynamic_mask, dtype=bool).reshape(-1)
            if len(mask) != n:
                raise ValueError(f"dynamic_mask length {len(mask)} != point count {n}")
            labels[mask] = NOISE_LABEL
            if cluster_ids is not None:
                cid = np.asarray(cluster_ids, dtype=np.int32).reshape(-1)
                if len(cid) != n:
                    raise ValueError(f"cluster_ids length {len(cid)} != point count {n}")
                clustered = mask & (cid >= 0)
                labels[clustered] = cid[clustered]
        return cls(timestamp_index, pts, labels)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dynamic_mask(self) -> np.ndarray:
        return self.labels != STATIC_LABEL

    @property
    def dynamic_points(self) -> np.ndarray:
        return self.points[self.labels != STATIC_LABEL]

    def cluster_ids(self) -> np.ndarray:
        """Sorted unique cluster ids present in this frame."""
        ids = np.unique(self.labels[self.labels >= 0])
        return ids


@dataclass(frozen=True)
class FrameWindow:
    """Ego-aligned frame sequence {t-h, ..., t, t+1}; last frame is the target."""

    frames: tuple
    source_index: int
    ego_transforms: tuple

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "ego_transforms", tuple(self.ego_transforms))

    @property
    def source(self) -> Frame:
        return self.frames[self.source_index]

    @property
    def target(self) -> Frame:
        return self.frames[-1]

    @property
    def horizon(self) -> int:
        """Number of past frames h before the source."""
        return len(self.frames) - 2

    def neighbor_offsets(self) -> list:
        """Candidate frame offsets t' - t in canonical order: +1 first, then
        -1, -2, ..., -h (most recent first)."""
        return [1] + [-m for m in range(1, self.horizon + 1)]

    def frame_at_offset(self, offset: int) -> Frame:
        return self.frames[self.source_index + offset]


@dataclass(frozen=True)
class FlowField:
    """Per-point residual flow (meters per frame interval) for a source frame."""

    flow: np.ndarray

    def __post_init__(self):
        f = as_points(self.flow)
        object.__setattr__(self, "flow", readonly_view(f))

    @classmethod
    def zeros(cls, n: int) -> "FlowField":
        return cls(np.zeros((n, 3)))

    def __len__(self) -> int:
        return len(self.flow)


@dataclass(frozen=True)
class Diagnostic:
    """One violated invariant: a stable code plus a human-readable message."""

    code: str
    message: str
    frame_index: Optional[int] = None
    point_index: Optional[int] = None

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


def validate_window(window: FrameWindow) -> list:
    """Check every FrameWindow invariant; returns a list of Diagnostics.

    Reports rather than raises, so malformed inputs can be inspected. An
    empty list means the window is well-formed.
    """
    diags = []
    frames = window.frames
    if len(frames) < 3:
        diags.append(Diagnostic("too-few-frames",
                                f"window has {len(frames)} frames, need at least 3 (h >= 1)"))
    if len(window.ego_transforms) != len(frames):
        diags.append(Diagnostic("transform-count",
                                f"{len(window.ego_transforms)} ego transforms for {len(frames)} frames"))
    indices = [f.timestamp_index for f in frames]
    for a, b in zip(indices, indices[1:]):
        if b != a + 1:
            diags.append(Diagnostic("non-contiguous-indices",
                                    f"non-contiguous indices: {a} followed by {b}"))
    if not (0 <= window.source_index < len(frames)):
        diags.append(Diagnostic("source-out-of-range",
                                f"source_index {window.source_index} outside window"))
    elif window.source_index != len(frames) - 2:
        diags.append(Diagnostic("source-not-penultimate",
                                f"source_index {window.source_index} is not second-to-last"))
    for i, f in enumerate(frames):
        if len(f.labels) != len(f.points):
            diags.append(Diagnostic("label-length-mismatch",
                                    f"frame {f.timestamp_index}: {len(f.labels)} labels for "
                                    f"{len(f.points)} points", frame_index=i))
        bad = np.nonzero(~np.isfinite(f.points).all(axis=1))[0]
        if len(bad):
            diags.append(Diagnostic("non-finite-coordinate",
                                    f"frame {f.timestamp_index}: non-finite coordinate at point "
                                    f"{int(bad[0])} ({len(bad)} total)",
                                    frame_index=i, point_index=int(bad[0])))
    return diags


def require_valid(window: FrameWindow) -> FrameWindow:
    """Raise ValueError listing every diagnostic if the window is malformed."""
    diags = validate_window(window)
    if diags:
        raise ValueError("invalid frame window: " + "; ".join(str(d) for d in diags))
    return window


def align_window(frames: Sequence[Frame], ego_poses: Sequence[RigidTransform],
                 t: int, h: int) -> FrameWindow:
    """Build the window {t-h, ..., t, t+1} with every frame expressed in
    frame t+1's coordinates.

    ``ego_poses[i]`` is frame i's sensor-to-world pose; the applied per-frame
    transform is pose(t+1)^-1 composed with pose(t'). Raises on out-of-range
    windows.
    """
    from .geometry import compose  # local to keep module import light

    if h < 1:
        raise ValueError("h must be >= 1")
    if t - h < 0 or t + 1 >= len(frames):
        raise ValueError(f"window [{t - h}, {t + 1}] out of range for "
                         f"{len(frames)} frames")
    target_inv = ego_poses[t + 1].inverse()
    aligned = []
    transforms = []
    for idx in range(t - h, t + 2):
        transform = compose(target_inv, ego_poses[idx])
        frame = frames[idx]
        aligned.append(Frame(frame.timestamp_index, transform.apply(frame.points),
                             frame.labels))
        transforms.append(transform)
    return FrameWindow(tuple(aligned), source_index=h, ego_transforms=tuple(transforms))
