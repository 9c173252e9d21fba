import numpy as np
import pytest

from oracles import central_difference_gradient, dcls_direct
from tfm.frames import FlowField, Frame, FrameWindow, STATIC_LABEL
from tfm.geometry import RigidTransform
from tfm.losses import (LossConfig, dynamic_cluster_loss, freeze_correspondences,
                        geometric_components, geometric_loss, loss_gradient,
                        static_loss, total_loss, total_loss_frozen)
from tfm.segmentation import ClusterSet, DynamicCluster


def clusters_from_sizes(sizes):
    clusters = []
    start = 0
    for cid, size in enumerate(sizes):
        idx = np.arange(start, start + size)
        clusters.append(DynamicCluster(cid, idx, np.zeros(3)))
        start += size
    return ClusterSet(tuple(clusters), np.zeros(0, dtype=np.int64))


class TestDynamicClusterLoss:
    def test_zero_at_targets(self):
        cs = clusters_from_sizes([3, 2])
        flow = FlowField(np.tile([0.2, -0.1, 0.5], (5, 1)))
        targets = {0: np.array([0.2, -0.1, 0.5]), 1: np.array([0.2, -0.1, 0.5])}
        p, c, _ = dynamic_cluster_loss(flow, cs, targets)
        assert p == 0.0 and c == 0.0

    def test_two_point_cluster_hand_value(self):
        cs = clusters_from_sizes([2])
        flow = FlowField(np.array([[1.0, 0, 0], [0.0, 0, 0]]))
        targets = {0: np.zeros(3)}
        p, c, _ = dynamic_cluster_loss(flow, cs, targets)
        assert p == pytest.approx(0.5, abs=1e-15)
        assert c == pytest.approx(0.5, abs=1e-15)

    def test_size_imbalance_rebalancing(self):
        # 100-point cluster exact, 1-point cluster off by 1.
        cs = clusters_from_sizes([100, 1])
        flow = np.zeros((101, 3))
        flow[100] = [1.0, 0.0, 0.0]
        targets = {0: np.zeros(3), 1: np.zeros(3)}
        p, c, per = dynamic_cluster_loss(FlowField(flow), cs, targets)
        assert p == pytest.approx(1.0 / 101.0, abs=1e-12)
        assert c == pytest.approx(0.5, abs=1e-12)
        assert per[0] == 0.0 and per[1] == 1.0

    def test_single_cluster_point_equals_cluster_level(self):
        rng = np.random.default_rng(0)
        cs = clusters_from_sizes([37])
        flow = FlowField(rng.normal(size=(37, 3)))
        targets = {0: rng.normal(size=3)}
        p, c, _ = dynamic_cluster_loss(flow, cs, targets)
        assert p == c

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(1)
        cs = clusters_from_sizes([5, 17, 3])
        flow = rng.normal(size=(25, 3))
        targets = {i: rng.normal(size=3) for i in range(3)}
        p, c, _ = dynamic_cluster_loss(FlowField(flow), cs, targets)
        op, oc = dcls_direct(flow, {i: c_.point_indices.tolist() for i, c_ in
                                    enumerate(cs.clusters)}, targets)
        assert p == pytest.approx(op, rel=1e-14)
        assert c == pytest.approx(oc, rel=1e-14)

    def test_missing_target_names_cluster(self):
        cs = clusters_from_sizes([2, 2])
        flow = FlowField(np.zeros((4, 3)))
        with pytest.raises(ValueError, match="cluster 1"):
            dynamic_cluster_loss(flow, cs, {0: np.zeros(3)})

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        flow = rng.normal(size=(20, 3))
        idx_a = np.arange(0, 10)
        idx_b = np.arange(10, 20)
        targets = {0: rng.normal(size=3), 1: rng.normal(size=3)}
        cs = ClusterSet((DynamicCluster(0, idx_a, np.zeros(3)),
                         DynamicCluster(1, idx_b, np.zeros(3))), np.zeros(0, dtype=np.int64))
        perm = rng.permutation(20)
        inverse = np.argsort(perm)
        cs_p = ClusterSet((DynamicCluster(0, np.sort(inverse[idx_a]), np.zeros(3)),
                           DynamicCluster(1, np.sort(inverse[idx_b]), np.zeros(3))),
                          np.zeros(0, dtype=np.int64))
        p1, c1, _ = dynamic_cluster_loss(FlowField(flow), cs, targets)
        p2, c2, _ = dynamic_cluster_loss(FlowField(flow[perm]), cs_p, targets)
        assert p1 == pytest.approx(p2, rel=1e-13)
        assert c1 == pytest.approx(c2, rel=1e-13)


class TestStaticLoss:
    def test_zero_flow(self):
        assert static_loss(FlowField(np.zeros((5, 3))), [0, 1, 2]) == 0.0

    def test_three_four_five(self):
        flow = FlowField(np.array([[0.0, 3.0, 4.0]]))
        assert static_loss(flow, [0]) == 25.0

    def test_no_static_points(self):
        assert static_loss(FlowField(np.ones((3, 3))), []) == 0.0

    def test_matches_direct_mean(self):
        rng = np.random.default_rng(3)
        flow = rng.normal(size=(50, 3))
        idx = rng.choice(50, size=20, replace=False)
        direct = float(np.mean([np.dot(flow[i], flow[i]) for i in idx]))
        assert static_loss(FlowField(flow), idx) == pytest.approx(direct, rel=1e-13)


def _still_window(source_pts, source_labels, neighbor_pts, neighbor_labels, h=1):
    """Window whose every neighbor frame carries the same given cloud."""
    frames = []
    n_frames = h + 2
    for i in range(n_frames):
        if i == n_frames - 2:
            frames.append(Frame(i, source_pts, source_labels))
        else:
            frames.append(Frame(i, neighbor_pts, neighbor_labels))
    return FrameWindow(tuple(frames), n_frames - 2,
                       tuple(RigidTransform.identity() for _ in range(n_frames)))


class TestGeometricLoss:
    def test_perfectly_warped_rigid_scene(self, simple_scene):
        window = simple_scene.window_at(3, 3)
        flow = simple_scene.gt_flow(3)
        assert geometric_loss(flow, window) == pytest.approx(0.0, abs=1e-12)

    def test_zero_flow_displaced_object_closed_form(self):
        # Same material points in every frame, object displaced d per frame
        # along x; points spaced > 2d apart, so every point's NN is its own
        # displaced copy and the dynamic Chamfer to the target is exactly d^2.
        gx, gy, gz = np.meshgrid(np.arange(2), np.arange(5), np.arange(4), indexing="ij")
        base = 1.5 * np.stack([gx, gy, gz], axis=-1).reshape(-1, 3).astype(np.float64)
        d = 0.4
        labels = np.zeros(len(base), dtype=np.int32)
        frames = (Frame(0, base - [d, 0, 0], labels),
                  Frame(1, base, labels),
                  Frame(2, base + [d, 0, 0], labels))
        window = FrameWindow(frames, 1, tuple(RigidTransform.identity() for _ in frames))
        flow = FlowField(np.zeros((len(base), 3)))
        comps = geometric_components(flow, window, truncation=2.0)
        assert comps["per_frame"][1] == pytest.approx(d * d, rel=1e-12)
        assert comps["per_frame"][-1] == pytest.approx(d * d, rel=1e-12)
        assert comps["dynamic_component"] == pytest.approx(d * d, rel=1e-12)

    def test_all_beyond_truncation_clamps(self):
        pts = np.zeros((5, 3))
        pts[:, 1] = np.arange(5) * 100.0
        labels = np.zeros(5, dtype=np.int32)
        far = pts + [500.0, 0.0, 0.0]
        window = _still_window(pts, labels, far, labels)
        flow = FlowField(np.zeros((5, 3)))
        trunc = 2.0
        value = geometric_loss(flow, window, truncation=trunc)
        assert value == pytest.approx(trunc * trunc, rel=1e-12)

    def test_neighbor_without_dynamic_points_skipped(self):
        pts = np.random.default_rng(5).uniform(0, 2, size=(30, 3))
        dyn_labels = np.zeros(30, dtype=np.int32)
        static_labels = np.full(30, STATIC_LABEL, dtype=np.int32)
        # Past frame all static, target frame dynamic.
        frames = (Frame(0, pts, static_labels), Frame(1, pts, dyn_labels),
                  Frame(2, pts, dyn_labels))
        window = FrameWindow(frames, 1, tuple(RigidTransform.identity() for _ in frames))
        comps = geometric_components(FlowField(np.zeros((30, 3))), window)
        assert set(comps["per_frame"]) == {1}


class TestTotalLoss:
    def _fixture(self, seed=6):
        rng = np.random.default_rng(seed)
        base = rng.uniform(0, 4, size=(60, 3))
        labels = np.full(60, STATIC_LABEL, dtype=np.int32)
        labels[:20] = 0
        labels[20:35] = 1
        frames = (Frame(0, base + rng.normal(scale=0.05, size=base.shape), labels),
                  Frame(1, base, labels),
                  Frame(2, base + rng.normal(scale=0.05, size=base.shape), labels))
        window = FrameWindow(frames, 1, tuple(RigidTransform.identity() for _ in frames))
        clusters = ClusterSet.from_frame(window.source)
        flow = FlowField(rng.normal(scale=0.2, size=(60, 3)))
        targets = {0: rng.normal(size=3), 1: rng.normal(size=3)}
        return window, clusters, flow, targets

    def test_all_terms_zero(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        labels = np.full(2, STATIC_LABEL, dtype=np.int32)
        window = _still_window(pts, labels, pts, labels)
        report = total_loss(FlowField(np.zeros((2, 3))), window,
                            ClusterSet((), np.zeros(0, dtype=np.int64)), {})
        assert report.total == 0.0

    def test_only_dcls_enabled(self):
        window, clusters, flow, targets = self._fixture()
        config = LossConfig(enable_static=False, enable_geometric=False)
        report = total_loss(flow, window, clusters, targets, config)
        assert report.total == report.dcls_total
        assert report.static_loss == 0.0 and report.geom_loss == 0.0

    def test_additivity_exact(self):
        window, clusters, flow, targets = self._fixture()
        report = total_loss(flow, window, clusters, targets)
        assert report.total == report.dcls_total + report.static_loss + report.geom_loss
        assert report.dcls_total == report.dcls_point_level + report.dcls_cluster_level
        only = {}
        for name, config in [
            ("dcls", LossConfig(enable_static=False, enable_geometric=False)),
            ("static", LossConfig(enable_dynamic=False, enable_geometric=False)),
            ("geom", LossConfig(enable_dynamic=False, enable_static=False)),
        ]:
            only[name] = total_loss(flow, window, clusters, targets, config).total
        combined = only["dcls"] + only["static"] + only["geom"]
        assert report.total == pytest.approx(combined, rel=1e-12)

    def test_dcls_modes(self):
        window, clusters, flow, targets = self._fixture()
        both = total_loss(flow, window, clusters, targets,
                          LossConfig(enable_static=False, enable_geometric=False))
        point = total_loss(flow, window, clusters, targets,
                           LossConfig(enable_static=False, enable_geometric=False,
                                      dcls_mode="point_only"))
        cluster = total_loss(flow, window, clusters, targets,
                             LossConfig(enable_static=False, enable_geometric=False,
                                        dcls_mode="cluster_only"))
        assert point.total == both.dcls_point_level
        assert cluster.total == both.dcls_cluster_level
        assert point.dcls_cluster_level == 0.0

    def test_non_negativity(self):
        for seed in range(5):
            window, clusters, flow, targets = self._fixture(seed)
            report = total_loss(flow, window, clusters, targets)
            assert report.total >= 0.0
            assert min(report.dcls_point_level, report.dcls_cluster_level,
                       report.static_loss, report.geom_loss) >= 0.0


class TestLossGradient:
    def test_zero_gradient_at_optimum(self):
        # Flow equals targets, static flow zero: dcls+static gradient vanishes.
        pts = np.random.default_rng(7).uniform(0, 3, size=(20, 3))
        labels = np.full(20, STATIC_LABEL, dtype=np.int32)
        labels[:8] = 0
        window = _still_window(pts, labels, pts, labels)
        clusters = ClusterSet.from_frame(window.source)
        target = np.array([0.1, -0.2, 0.3])
        flow = np.zeros((20, 3))
        flow[:8] = target
        config = LossConfig(enable_geometric=False)
        grad = loss_gradient(FlowField(flow), window, clusters, {0: target}, config)
        np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_single_point_single_cluster_hand_derivative(self):
        # One clustered point: d/df [ |f-t|^2 * (1/1) + (1/1)(1/1)|f-t|^2 ] = 4(f-t).
        pts = np.array([[0.0, 0.0, 0.0]])
        labels = np.array([0], dtype=np.int32)
        window = _still_window(pts, labels, pts, labels)
        clusters = ClusterSet.from_frame(window.source)
        f = np.array([[0.5, -1.0, 2.0]])
        t = np.array([0.1, 0.1, 0.1])
        config = LossConfig(enable_static=False, enable_geometric=False)
        grad = loss_gradient(FlowField(f), window, clusters, {0: t}, config)
        np.testing.assert_allclose(grad, 4.0 * (f - t), rtol=1e-14)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = 24
        base = rng.uniform(0, 3, size=(n, 3))
        labels = np.full(n, STATIC_LABEL, dtype=np.int32)
        labels[:8] = 0
        labels[8:14] = 1
        neighbor = base + rng.normal(scale=0.3, size=base.shape)
        window = _still_window(base, labels, neighbor, labels, h=2)
        clusters = ClusterSet.from_frame(window.source)
        flow = rng.normal(scale=0.3, size=(n, 3))
        targets = {0: rng.normal(size=3), 1: rng.normal(size=3)}
        config = LossConfig()
        frozen = freeze_correspondences(FlowField(flow), window, config.chamfer_truncation)
        grad = loss_gradient(FlowField(flow), window, clusters, targets, config,
                             frozen=frozen)

        def frozen_total(flow_arr):
            return total_loss_frozen(FlowField(flow_arr), window, clusters, targets,
                                     config, frozen)

        numeric = central_difference_gradient(frozen_total, flow, step=1e-5)
        scale = np.maximum(np.abs(numeric), 1e-6)
        rel = np.abs(grad - numeric) / scale
        assert rel.max() < 1e-4
