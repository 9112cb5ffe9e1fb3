import math

import numpy as np
import pytest

from partbox.geometry import (
    CORNER_SIGNS,
    GeometryError,
    NormalizationError,
    OrientedBox,
    PROPER_SIGNED_PERMUTATIONS,
    SIGNED_PERMUTATIONS,
    axis_angle_matrix,
    box_vertices,
    equivalence_set,
    geodesic_error,
    matrix_to_quat,
    pca_obb_fit,
    quat_to_matrix,
    random_rotation,
    rotation_set_distance,
    sample_box_surface,
)


def quat_mul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


class TestQuatMatrix:
    def test_identity(self):
        assert np.allclose(quat_to_matrix([1, 0, 0, 0]), np.eye(3))

    def test_90deg_about_z(self):
        r = math.sqrt(0.5)
        R = quat_to_matrix([r, 0, 0, r])
        expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
        assert np.allclose(R, expected, atol=1e-12)
        # columns are the rotated basis axes
        assert np.allclose(R[:, 0], [0, 1, 0], atol=1e-12)
        assert np.allclose(R[:, 1], [-1, 0, 0], atol=1e-12)

    def test_round_trip_1000_samples(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            q2 = matrix_to_quat(quat_to_matrix(q))
            assert min(np.abs(q2 - q).max(), np.abs(q2 + q).max()) < 1e-9

    def test_matrix_to_quat_identity(self):
        q = matrix_to_quat(np.eye(3))
        assert np.abs(np.abs(q[0]) - 1.0) < 1e-12

    def test_matrix_to_quat_180deg_each_axis(self):
        for axis in range(3):
            R = axis_angle_matrix(np.eye(3)[axis], math.pi)
            q = matrix_to_quat(R)
            assert np.allclose(quat_to_matrix(q), R, atol=1e-9)

    def test_composition_consistency_1000_pairs(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            q1 = rng.normal(size=4)
            q1 /= np.linalg.norm(q1)
            q2 = rng.normal(size=4)
            q2 /= np.linalg.norm(q2)
            R = quat_to_matrix(q1) @ quat_to_matrix(q2)
            qc = matrix_to_quat(R)
            qp = quat_mul(q1, q2)
            assert min(np.abs(qc - qp).max(), np.abs(qc + qp).max()) < 1e-9

    def test_rotation_action_round_trip(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        R = quat_to_matrix(q)
        R2 = quat_to_matrix(matrix_to_quat(R))
        v = rng.normal(size=(100, 3))
        assert np.abs(v @ R.T - v @ R2.T).max() < 1e-9

    def test_zero_quaternion_raises(self):
        with pytest.raises(NormalizationError):
            quat_to_matrix([0, 0, 0, 0])

    def test_non_orthonormal_raises(self):
        with pytest.raises(GeometryError):
            matrix_to_quat(np.eye(3) * 1.5)


class TestBoxVertices:
    def test_unit_cube_at_origin(self):
        b = OrientedBox([0, 0, 0], [1, 1, 1], [1, 0, 0, 0])
        v = box_vertices(b)
        expected = CORNER_SIGNS * 0.5
        assert np.allclose(v, expected)

    def test_translation_shifts_vertices(self):
        b0 = OrientedBox([0, 0, 0], [1, 2, 3], [1, 0, 0, 0])
        b1 = OrientedBox([1, 0, 0], [1, 2, 3], [1, 0, 0, 0])
        assert np.allclose(box_vertices(b1), box_vertices(b0) + np.array([1.0, 0, 0]))

    def test_vertex_mean_is_center(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            q = rng.normal(size=4)
            b = OrientedBox(rng.normal(size=3), rng.uniform(0.1, 2, size=3), q)
            assert np.abs(box_vertices(b).mean(axis=0) - b.center).max() < 1e-12

    def test_rotation_maps_unrotated_vertices(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            c = rng.normal(size=3)
            s = rng.uniform(0.1, 2, size=3)
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            R = quat_to_matrix(q)
            plain = box_vertices(OrientedBox(c, s, [1, 0, 0, 0]))
            rotated = box_vertices(OrientedBox(c, s, q))
            assert np.abs(rotated - ((plain - c) @ R.T + c)).max() < 1e-9

    def test_degenerate_size_clamped(self):
        b = OrientedBox([0, 0, 0], [1, 0, 1], [1, 0, 0, 0])
        assert b.size[1] > 0


class TestPcaFit:
    def test_axis_aligned_cube_corners(self):
        pts = CORNER_SIGNS * 0.5
        box = pca_obb_fit(pts)
        assert np.allclose(box.rotation, np.eye(3), atol=1e-9)
        assert np.allclose(box.size, [1, 1, 1], atol=1e-9)
        assert np.allclose(box.center, [0, 0, 0], atol=1e-9)

    def test_rotated_points_recover_axis_set(self):
        rng = np.random.default_rng(21)
        base = CORNER_SIGNS * np.array([0.9, 0.5, 0.2])
        for _ in range(25):
            R = random_rotation(rng)
            box = pca_obb_fit(base @ R.T)
            eq = equivalence_set(R)
            assert rotation_set_distance(box.rotation, eq) < 1e-6

    def test_contains_all_points(self):
        rng = np.random.default_rng(33)
        for _ in range(20):
            pts = rng.normal(size=(50, 3)) * rng.uniform(0.2, 3, size=3)
            box = pca_obb_fit(pts)
            assert box.contains(pts, tol=1e-9)
            R = box.rotation
            assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9

    def test_two_distinct_points_ok_one_point_errors(self):
        box = pca_obb_fit([[0, 0, 0], [1, 0, 0]])
        assert box.contains([[0, 0, 0], [1, 0, 0]])
        with pytest.raises(GeometryError):
            pca_obb_fit([[0, 0, 0]])

    def test_coplanar_points_get_clamped_thickness(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.3, 0.7, 0]])
        box = pca_obb_fit(pts)
        assert np.all(box.size > 0)


class TestSurfaceSampling:
    def _face_index(self, box, pts):
        local = (pts - box.center) @ box.rotation
        ratios = np.abs(local) / (0.5 * box.size)
        return np.argmax(ratios, axis=1), ratios

    def test_face_counts_binomial_bound(self):
        box = OrientedBox([0, 0, 0], [1, 1, 1], [1, 0, 0, 0])
        n = 1024
        p = 1.0 / 6.0
        sigma = math.sqrt(n * p * (1 - p))
        for seed in range(20):
            pts = sample_box_surface(box, n, seed=seed)
            local = (pts - box.center) @ box.rotation
            for axis in range(3):
                for sign in (1.0, -1.0):
                    count = int(np.sum(np.isclose(local[:, axis], sign * 0.5)))
                    assert abs(count - n * p) <= 4 * sigma

    def test_points_on_surface(self):
        rng = np.random.default_rng(2)
        q = rng.normal(size=4)
        box = OrientedBox([0.3, -0.2, 0.5], [0.4, 1.2, 0.7], q)
        pts = sample_box_surface(box, 500, seed=4)
        _, ratios = self._face_index(box, pts)
        assert np.abs(ratios.max(axis=1) - 1.0).max() < 1e-9
        assert np.all(ratios <= 1.0 + 1e-9)

    def test_degenerate_flat_box_near_midplane(self):
        eps = 1e-6
        box = OrientedBox([0, 0, 0], [1.0, 1.0, eps], [1, 0, 0, 0])
        pts = sample_box_surface(box, 300, seed=1)
        assert np.abs(pts[:, 2]).max() <= eps

    def test_deterministic_per_seed(self):
        box = OrientedBox([0, 0, 0], [1, 2, 3], [1, 0, 0, 0])
        a = sample_box_surface(box, 128, seed=9)
        b = sample_box_surface(box, 128, seed=9)
        c = sample_box_surface(box, 128, seed=10)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestEquivalenceSet:
    def test_identity_all48(self):
        eq = equivalence_set(np.eye(3), mode="all48")
        assert len(eq) == 48
        key = {m.tobytes() for m in eq.elements}
        ref = {m.tobytes() for m in SIGNED_PERMUTATIONS}
        assert key == ref

    def test_identity_proper24(self):
        eq = equivalence_set(np.eye(3), mode="proper24")
        assert len(eq) == 24
        assert np.allclose([np.linalg.det(m) for m in eq.elements], 1.0)
        key = {m.tobytes() for m in eq.elements}
        ref = {m.tobytes() for m in PROPER_SIGNED_PERMUTATIONS}
        assert key == ref

    def test_set_invariant_under_relabeling(self):
        rng = np.random.default_rng(17)
        R = random_rotation(rng)
        base = {m.tobytes() for m in equivalence_set(R).elements}
        for G in SIGNED_PERMUTATIONS:
            relabeled = {m.tobytes() for m in equivalence_set(R @ G).elements}
            assert relabeled == base

    def test_generic_cardinality(self):
        rng = np.random.default_rng(19)
        for _ in range(10):
            R = random_rotation(rng)
            assert len(equivalence_set(R, "all48")) == 48
            assert len(equivalence_set(R, "proper24")) == 24


class TestSetDistances:
    def test_zero_for_elements(self):
        rng = np.random.default_rng(23)
        R = random_rotation(rng)
        eq = equivalence_set(R)
        for k in range(0, 48, 7):
            assert rotation_set_distance(eq.elements[k], eq) == 0.0
            assert geodesic_error(eq.elements[k], eq) < 1e-6

    def test_rz10_distance_matches_brute_force(self):
        Rz = axis_angle_matrix([0, 0, 1], math.radians(10))
        eq = equivalence_set(np.eye(3))
        brute = min(float(np.mean((Rz - E) ** 2)) for E in eq.elements)
        got = rotation_set_distance(Rz, eq)
        assert got == brute
        # nearest element is the identity itself
        closed_form = 4.0 * (1.0 - math.cos(math.radians(10))) / 9.0
        assert abs(got - closed_form) < 1e-12

    def test_rz10_geodesic_is_10_degrees(self):
        Rz = axis_angle_matrix([0, 0, 1], math.radians(10))
        eq = equivalence_set(np.eye(3))
        assert abs(geodesic_error(Rz, eq) - 10.0) < 1e-6

    def test_quotient_never_exceeds_base_geodesic(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            R = random_rotation(rng)
            Rhat = random_rotation(rng)
            eq = equivalence_set(R)
            rel = Rhat.T @ R
            cos = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
            base_deg = math.degrees(math.acos(cos))
            assert geodesic_error(Rhat, eq) <= base_deg + 1e-9

    def test_invariance_under_base_relabeling(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            R = random_rotation(rng)
            Rhat = random_rotation(rng)
            d0 = rotation_set_distance(Rhat, equivalence_set(R))
            g0 = geodesic_error(Rhat, equivalence_set(R))
            for G in SIGNED_PERMUTATIONS[::5]:
                assert abs(rotation_set_distance(Rhat, equivalence_set(R @ G)) - d0) <= 1e-12
                assert abs(geodesic_error(Rhat, equivalence_set(R @ G)) - g0) <= 1e-12
