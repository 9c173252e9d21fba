import numpy as np
import pytest

from tfm.geometry import RigidTransform, apply_transform, compose


class TestApplyTransform:
    def test_identity_preserves_cloud(self):
        rng = np.random.default_rng(0)
        cloud = rng.normal(size=(50, 3))
        out = apply_transform(RigidTransform.identity(), cloud)
        np.testing.assert_array_equal(out, cloud)

    def test_pure_translation(self):
        t = RigidTransform(np.eye(3), [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(t.apply([[0.0, 0.0, 0.0]]), [[1.0, 0.0, 0.0]])

    def test_quarter_yaw(self):
        t = RigidTransform.yaw(np.pi / 2)
        np.testing.assert_allclose(t.apply([[1.0, 0.0, 0.0]]), [[0.0, 1.0, 0.0]], atol=1e-12)

    def test_rigidity_preserves_pairwise_distances(self):
        rng = np.random.default_rng(1)
        cloud = rng.normal(scale=10.0, size=(40, 3))
        t = RigidTransform.yaw(0.73, translation=(4.0, -2.0, 1.0))
        moved = t.apply(cloud)
        before = np.linalg.norm(cloud[:, None] - cloud[None, :], axis=2)
        after = np.linalg.norm(moved[:, None] - moved[None, :], axis=2)
        np.testing.assert_allclose(after, before, rtol=1e-9, atol=1e-12)


class TestCompose:
    def test_identity_is_neutral(self):
        t = RigidTransform.yaw(0.4, translation=(1.0, 2.0, 3.0))
        out = compose(RigidTransform.identity(), t)
        np.testing.assert_allclose(out.as_matrix(), t.as_matrix(), atol=1e-15)

    def test_inverse_composes_to_identity(self):
        t = RigidTransform.yaw(1.1, translation=(-3.0, 0.5, 2.0))
        out = compose(t, t.inverse())
        np.testing.assert_allclose(out.as_matrix(), np.eye(4), atol=1e-9)

    def test_two_half_yaws_make_one(self):
        a = RigidTransform.yaw(np.pi / 4)
        b = RigidTransform.yaw(np.pi / 4)
        np.testing.assert_allclose(compose(a, b).rotation,
                                   RigidTransform.yaw(np.pi / 2).rotation, atol=1e-12)

    def test_matches_sequential_application(self):
        rng = np.random.default_rng(2)
        cloud = rng.normal(size=(30, 3))
        a = RigidTransform.yaw(0.3, translation=(1, 0, 2))
        b = RigidTransform.yaw(-0.9, translation=(0, 5, -1))
        np.testing.assert_allclose(compose(a, b).apply(cloud),
                                   a.apply(b.apply(cloud)), atol=1e-9)

    def test_associativity(self):
        rng = np.random.default_rng(3)
        transforms = [RigidTransform.yaw(rng.uniform(-3, 3), translation=rng.normal(size=3))
                      for _ in range(3)]
        a, b, c = transforms
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        np.testing.assert_allclose(left.as_matrix(), right.as_matrix(), atol=1e-9)


class TestValidation:
    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(ValueError, match="orthonormal"):
            RigidTransform(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        rot = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="proper"):
            RigidTransform(rot, np.zeros(3))

    def test_rejects_nan(self):
        rot = np.eye(3)
        with pytest.raises(ValueError, match="finite"):
            RigidTransform(rot, [np.nan, 0, 0])
