import numpy as np
import pytest

from tfm.frames import (Frame, FrameWindow, FlowField, NOISE_LABEL, STATIC_LABEL,
                        align_window, validate_window)
from tfm.geometry import RigidTransform


def _frame(index, n=4, points=None):
    pts = np.arange(n * 3, dtype=np.float64).reshape(n, 3) if points is None else points
    return Frame(index, pts, np.full(len(pts), STATIC_LABEL, dtype=np.int32))


def _window(indices, source_index=None):
    frames = tuple(_frame(i) for i in indices)
    if source_index is None:
        source_index = len(frames) - 2
    transforms = tuple(RigidTransform.identity() for _ in frames)
    return FrameWindow(frames, source_index, transforms)


class TestFrame:
    def test_from_masks_builds_labels(self):
        pts = np.zeros((4, 3))
        f = Frame.from_masks(0, pts, dynamic_mask=[True, False, True, True],
                             cluster_ids=[2, -1, -1, 0])
        assert f.labels.tolist() == [2, STATIC_LABEL, NOISE_LABEL, 0]
        assert f.dynamic_mask.tolist() == [True, False, True, True]
        assert f.cluster_ids().tolist() == [0, 2]

    def test_mask_length_mismatch_raises(self):
        with pytest.raises(ValueError, match="length"):
            Frame.from_masks(0, np.zeros((3, 3)), dynamic_mask=[True, False])


class TestValidateWindow:
    def test_well_formed_window_is_ok(self):
        assert validate_window(_window([0, 1, 2, 3, 4])) == []

    def test_gap_in_indices_reported(self):
        diags = validate_window(_window([0, 1, 3, 4]))
        assert any(d.code == "non-contiguous-indices" for d in diags)

    def test_nan_coordinate_names_frame_and_point(self):
        pts = np.zeros((3, 3))
        pts[1, 2] = np.nan
        frames = (_frame(0), _frame(1, points=pts), _frame(2))
        w = FrameWindow(frames, 1, tuple(RigidTransform.identity() for _ in frames))
        diags = validate_window(w)
        hit = [d for d in diags if d.code == "non-finite-coordinate"]
        assert len(hit) == 1
        assert hit[0].frame_index == 1 and hit[0].point_index == 1
        assert "frame 1" in hit[0].message

    def test_source_must_be_second_to_last(self):
        diags = validate_window(_window([0, 1, 2], source_index=0))
        assert any(d.code == "source-not-penultimate" for d in diags)

    def test_too_few_frames(self):
        diags = validate_window(_window([0, 1]))
        assert any(d.code == "too-few-frames" for d in diags)


class TestAlignWindow:
    def test_identity_ego_is_noop(self):
        frames = [_frame(i) for i in range(4)]
        poses = [RigidTransform.identity() for _ in frames]
        w = align_window(frames, poses, 2, 1)
        np.testing.assert_array_equal(w.source.points, frames[2].points)
        assert [f.timestamp_index for f in w.frames] == [1, 2, 3]
        assert w.horizon == 1

    def test_alignment_moves_into_target_coordinates(self):
        # A world point fixed at the origin, seen from a sensor moving +x.
        poses = [RigidTransform(np.eye(3), [float(t), 0.0, 0.0]) for t in range(4)]
        frames = [_frame(t, points=poses[t].inverse().apply([[0.0, 0.0, 0.0]]))
                  for t in range(4)]
        w = align_window(frames, poses, 2, 2)
        for f in w.frames:
            np.testing.assert_allclose(f.points, poses[3].inverse().apply([[0, 0, 0]]),
                                       atol=1e-12)

    def test_out_of_range_raises(self):
        frames = [_frame(i) for i in range(4)]
        poses = [RigidTransform.identity() for _ in frames]
        with pytest.raises(ValueError, match="out of range"):
            align_window(frames, poses, 3, 1)
        with pytest.raises(ValueError, match="out of range"):
            align_window(frames, poses, 0, 1)

    def test_neighbor_offsets_most_recent_first(self):
        w = _window([0, 1, 2, 3, 4])
        assert w.neighbor_offsets() == [1, -1, -2, -3]


class TestFlowField:
    def test_zeros_and_length(self):
        f = FlowField.zeros(5)
        assert len(f) == 5
        assert not f.flow.any()

    def test_shape_enforced(self):
        with pytest.raises(ValueError):
            FlowField(np.zeros((4, 2)))
