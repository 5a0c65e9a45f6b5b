import math

import numpy as np
import pytest

from isagrasp.geometry import (
    Frame3,
    RigidTransform,
    UnitQuaternion,
    build_surface_frame,
    geodesic_distance,
)


def random_rotation(rng):
    return UnitQuaternion.random(rng).to_matrix()


class TestUnitQuaternion:
    def test_canonical_sign(self):
        q = UnitQuaternion(-1.0, 0.0, 0.0, 0.0)
        assert q.w == 1.0
        q = UnitQuaternion(0.0, -1.0, 0.0, 0.0)
        assert q.x == 1.0

    def test_normalized_on_construction(self):
        q = UnitQuaternion(2.0, 2.0, 2.0, 2.0)
        assert abs(q.w**2 + q.x**2 + q.y**2 + q.z**2 - 1.0) < 1e-12

    def test_negation_compares_equal_as_rotation(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = UnitQuaternion.random(rng)
            q_neg = UnitQuaternion(-q.w, -q.x, -q.y, -q.z)
            assert q.rotation_equal(q_neg)
            # canonicalization maps both to the same representative
            np.testing.assert_allclose(q_neg.as_array(), q.as_array(), atol=1e-15)

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            q = UnitQuaternion.random(rng)
            q2 = UnitQuaternion.from_matrix(q.to_matrix())
            assert q.rotation_equal(q2, tol=1e-10)

    def test_rotate_matches_matrix(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            q = UnitQuaternion.random(rng)
            v = rng.normal(size=3)
            np.testing.assert_allclose(q.rotate(v), q.to_matrix() @ v, atol=1e-12)

    def test_compose_matches_matrix_product(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = UnitQuaternion.random(rng), UnitQuaternion.random(rng)
            np.testing.assert_allclose(a.compose(b).to_matrix(),
                                       a.to_matrix() @ b.to_matrix(), atol=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            UnitQuaternion(0.0, 0.0, 0.0, 0.0)


class TestRigidTransform:
    def test_inverse_composes_to_identity(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            T = RigidTransform(rng.normal(size=3), UnitQuaternion.random(rng))
            I = T.compose(T.inverse())
            assert np.linalg.norm(I.translation) < 1e-9
            assert I.rotation.rotation_equal(UnitQuaternion.identity(), tol=1e-9)

    def test_composition_associative(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            A, B, C = (RigidTransform(rng.normal(size=3), UnitQuaternion.random(rng))
                       for _ in range(3))
            p = rng.normal(size=3)
            left = A.compose(B).compose(C).apply(p)
            right = A.compose(B.compose(C)).apply(p)
            np.testing.assert_allclose(left, right, atol=1e-9)

    def test_apply_matches_explicit(self):
        rng = np.random.default_rng(6)
        T = RigidTransform(rng.normal(size=3), UnitQuaternion.random(rng))
        p = rng.normal(size=3)
        np.testing.assert_allclose(T.apply(p), T.rotation.to_matrix() @ p + T.translation,
                                   atol=1e-12)


class TestGeodesicDistance:
    def test_identity_case(self):
        rng = np.random.default_rng(7)
        R = random_rotation(rng)
        assert geodesic_distance(R, R) == pytest.approx(0.0, abs=1e-7)

    def test_quarter_turn(self):
        Rz90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert geodesic_distance(np.eye(3), Rz90) == pytest.approx(math.pi / 2, abs=1e-12)

    def test_matches_quaternion_formula(self):
        # cross-check the matrix and quaternion closed forms against each other
        rng = np.random.default_rng(8)
        for _ in range(1000):
            q1, q2 = UnitQuaternion.random(rng), UnitQuaternion.random(rng)
            d_mat = geodesic_distance(q1.to_matrix(), q2.to_matrix())
            d_quat = 2.0 * math.acos(min(1.0, abs(q1.dot(q2))))
            assert d_mat == pytest.approx(d_quat, abs=1e-6)

    def test_symmetry_and_triangle_inequality(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            A, B, C = (random_rotation(rng) for _ in range(3))
            assert geodesic_distance(A, B) == pytest.approx(geodesic_distance(B, A), abs=1e-12)
            assert geodesic_distance(A, C) <= geodesic_distance(A, B) + geodesic_distance(B, C) + 1e-7

    def test_left_invariance(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            A, B, R = (random_rotation(rng) for _ in range(3))
            assert geodesic_distance(R @ A, R @ B) == pytest.approx(
                geodesic_distance(A, B), abs=1e-9)

    def test_range(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            d = geodesic_distance(random_rotation(rng), random_rotation(rng))
            assert 0.0 <= d <= math.pi

    def test_rejects_non_orthonormal(self):
        M = np.eye(3)
        M[0, 0] = 1.5
        with pytest.raises(ValueError):
            geodesic_distance(M, np.eye(3))


class TestBuildSurfaceFrame:
    def test_identity_frame(self):
        f = build_surface_frame(np.zeros(3), [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(f.axes, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(f.origin, np.zeros(3))

    def test_parallel_hint_fallback(self):
        # hint parallel to normal falls back to the global axis with the
        # smallest |dot| against the normal; for +z that is +x
        f = build_surface_frame([0.1, 0.2, 0.3], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0])
        np.testing.assert_allclose(f.axes[:, 0], [1.0, 0.0, 0.0], atol=1e-12)

    def test_orthonormal_with_z_equal_normal(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            p = rng.normal(size=3)
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            h = rng.normal(size=3)
            f = build_surface_frame(p, n, h)
            np.testing.assert_allclose(f.axes.T @ f.axes, np.eye(3), atol=1e-9)
            assert np.linalg.det(f.axes) == pytest.approx(1.0, abs=1e-9)
            np.testing.assert_allclose(f.axes[:, 2], n, atol=1e-9)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            p = rng.normal(size=3)
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            h = rng.normal(size=3)
            if abs(h @ n / np.linalg.norm(h)) > 0.99:
                continue  # fallback branch is not equivariant by design
            R = random_rotation(rng)
            f = build_surface_frame(p, n, h)
            g = build_surface_frame(R @ p, R @ n, R @ h)
            np.testing.assert_allclose(g.axes, R @ f.axes, atol=1e-7)

    def test_rejects_non_unit_normal(self):
        with pytest.raises(ValueError):
            build_surface_frame(np.zeros(3), [0.0, 0.0, 2.0], [1.0, 0.0, 0.0])


class TestFrame3:
    def test_world_local_round_trip(self):
        rng = np.random.default_rng(14)
        f = Frame3(rng.normal(size=3), random_rotation(rng))
        p = rng.normal(size=3)
        np.testing.assert_allclose(f.to_world(f.to_local(p)), p, atol=1e-12)

    def test_rejects_reflection(self):
        M = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            Frame3(np.zeros(3), M)
