"""Rigid 3-D transforms and point-cloud geometry shared by every module.

Point clouds are (N, 3) float64 arrays throughout the pipeline; single
precision appears only in file payloads (see :mod:`tfm.archive`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHONORMALITY_TOL = 1e-9


def readonly_view(array: np.ndarray) -> np.ndarray:
    """A read-only view of ``array``; the caller's array stays writable."""
    view = array.view()
    view.setflags(write=False)
    return view


def as_points(cloud) -> np.ndarray:
    """Coerce input to an (N, 3) float64 array without copying when possible."""
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class RigidTransform:
    """A proper rigid motion: rotation (3x3, orthonormal, det +1) + translation.

    Validity is enforced at construction so downstream operations never
    re-check it.
    """

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        tra = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tra))):
            raise ValueError("transform entries must be finite")
        err = np.max(np.abs(rot.T @ rot - np.eye(3)))
        if err > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
        if np.linalg.det(rot) < 0.0:
            raise ValueError("rotation must be proper (det +1), got a reflection")
        object.__setattr__(self, "rotation", readonly_view(rot))
        object.__setattr__(self, "translation", readonly_view(tra))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, mat) -> "RigidTransform":
        """Build from a 4x4 homogeneous matrix (row-major)."""
        m = np.asarray(mat, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def yaw(cls, angle_rad: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation about +z by ``angle_rad``, then translation."""
        c, s = np.cos(angle_rad), np.sin(angle_rad)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rot, np.asarray(translation, dtype=np.float64))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rot_t = self.rotation.T.copy()
        return RigidTransform(rot_t, -(rot_t @ self.translation))

    def apply(self, cloud) -> np.ndarray:
        """Map points: x -> R x + t. Preserves length and ordering."""
        return as_points(cloud) @ self.rotation.T + self.translation

    def apply_vectors(self, vecs) -> np.ndarray:
        """Rotate direction vectors (no translation); used for flow fields."""
        return as_points(vecs) @ self.rotation.T


def apply_transform(transform: RigidTransform, cloud) -> np.ndarray:
    return transform.apply(cloud)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equal to applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)
