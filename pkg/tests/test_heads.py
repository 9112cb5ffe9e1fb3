import numpy as np
import pytest

from partbox.geometry import CORNER_SIGNS, equivalence_set, random_rotation
from partbox.losses import LossConfig, moe_total_loss, size_loss
from partbox.nets.autodiff import DiffTensor
from partbox.nets.heads import (
    ContactHead,
    OrientationHead,
    RelationHead,
    SizeHead,
    VectorHead,
    bce_with_logits,
    contact_forward_batch,
    forward_contact,
    forward_orientation,
    forward_size,
    normalize_quaternions,
    orientation_forward_batch,
    quats_to_matrices,
    relation_logits_batch,
    relation_score,
    vector_forward_batch,
)
from partbox.nets.training import grad_check


class TestQuatOps:
    def test_matches_geometry_conversion(self):
        from partbox.geometry import quat_to_matrix

        rng = np.random.default_rng(0)
        q = rng.normal(size=(10, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        R = quats_to_matrices(DiffTensor(q)).value
        for i in range(10):
            # same closed form; geometry re-normalizes, so allow 1-ulp noise
            assert np.abs(R[i] - quat_to_matrix(q[i])).max() < 1e-14

    def test_normalize_fallback_to_identity(self):
        q = DiffTensor(np.array([[0.0, 0, 0, 0], [0, 2, 0, 0]]))
        out = normalize_quaternions(q)
        assert np.array_equal(out.value[0], [1, 0, 0, 0])
        assert np.array_equal(out.value[1], [0, 1, 0, 0])
        out.sum().backward()
        assert np.array_equal(q.grad[0], np.zeros(4))  # zero grad through fallback

    def test_normalize_gradient(self):
        rng = np.random.default_rng(1)
        q = DiffTensor(rng.normal(size=(3, 4)))
        coeff = rng.normal(size=(3, 4))
        report = grad_check(lambda: (normalize_quaternions(q) * coeff).sum(), [q])
        assert report.ok, str(report)


class TestOrientationHead:
    def test_zero_final_layer_fallback(self):
        head = OrientationHead.init(6, hidden=(8,), expert_hidden=(8,), n_experts=4, seed=0)
        for e in head.experts:
            e.zero_last_layer()
        pred = forward_orientation(head, np.ones(6))
        probs = pred.probabilities.value
        assert np.allclose(probs, 0.25, atol=1e-12)
        for r in pred.rotations:
            assert np.array_equal(r.value, np.eye(3))

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(2)
        head = OrientationHead.init(5, hidden=(16, 16), seed=3)
        feats = rng.normal(size=(7, 5))
        _, probs, _ = orientation_forward_batch(head, feats)
        assert np.abs(probs.value.sum(axis=1) - 1.0).max() < 1e-12

    def test_rotations_are_valid(self):
        rng = np.random.default_rng(3)
        head = OrientationHead.init(5, seed=4)
        rot, _, _ = orientation_forward_batch(head, rng.normal(size=(4, 5)))
        R = rot.value
        for i in range(4):
            for k in range(head.n_experts):
                m = R[i, k]
                assert np.abs(m.T @ m - np.eye(3)).max() < 1e-9
                assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-9)

    def test_loss_gradient_through_head(self):
        rng = np.random.default_rng(4)
        head = OrientationHead.init(4, hidden=(6,), expert_hidden=(5,), n_experts=2, seed=5)
        feat = rng.normal(size=4)
        eq = equivalence_set(random_rotation(rng))
        cfg = LossConfig(lam=0.8, laplace_b=0.5)

        def loss():
            pred = forward_orientation(head, feat)
            return moe_total_loss(pred, eq, cfg)

        report = grad_check(loss, head.parameters(), h=1e-5, tol=1e-4)
        assert report.ok, str(report)


class TestSizeHead:
    def test_axis_permutation_equivariance_exact(self):
        rng = np.random.default_rng(5)
        head = SizeHead.init(6, seed=6)
        feats = rng.normal(size=(3, 6))
        axes = np.eye(3)
        base = forward_size(head, feats, axes).value
        for perm in ([1, 2, 0], [2, 1, 0], [0, 2, 1]):
            out = forward_size(head, feats, axes[perm]).value
            assert np.array_equal(out, base[perm])

    def test_member_order_invariance_exact(self):
        rng = np.random.default_rng(6)
        head = SizeHead.init(6, seed=7)
        feats = rng.normal(size=(5, 6))
        axes = np.eye(3)
        base = forward_size(head, feats, axes).value
        for _ in range(5):
            perm = rng.permutation(5)
            assert np.array_equal(forward_size(head, feats[perm], axes).value, base)

    def test_single_member_is_unary_case(self):
        rng = np.random.default_rng(7)
        head = SizeHead.init(6, seed=8)
        f = rng.normal(size=6)
        axes = np.eye(3)
        one = forward_size(head, f.reshape(1, -1), axes).value
        flat = forward_size(head, f, axes).value
        assert np.array_equal(one, flat)

    def test_outputs_positive(self):
        rng = np.random.default_rng(8)
        head = SizeHead.init(6, seed=9)
        for _ in range(10):
            out = forward_size(head, rng.normal(size=(4, 6)), random_rotation(rng).T).value
            assert np.all(out > 0)

    def test_size_loss_gradient_through_head(self):
        rng = np.random.default_rng(9)
        head = SizeHead.init(4, hidden=(6,), axis_hidden=(6, 6), seed=10)
        feats = rng.normal(size=(2, 4))
        axes = np.eye(3)
        gt = np.array([0.5, 1.0, 1.5])

        def loss():
            return size_loss(forward_size(head, feats, axes), gt)

        report = grad_check(loss, head.parameters(), h=1e-5, tol=1e-4)
        assert report.ok, str(report)


class TestContactHead:
    def test_uniform_weights_give_centroid(self):
        head = ContactHead.init(5, seed=11)
        head.logit_mlp.zero_last_layer()
        verts = CORNER_SIGNS * 0.5
        w, c = forward_contact(head, np.ones(5), verts)
        assert np.allclose(w.value, 0.125, atol=1e-12)
        assert np.allclose(c.value, 0.0, atol=1e-12)

    def test_weights_on_simplex_and_contact_inside(self):
        rng = np.random.default_rng(10)
        head = ContactHead.init(5, seed=12)
        for _ in range(20):
            q = rng.normal(size=4)
            size = rng.uniform(0.2, 2.0, size=3)
            from partbox.geometry import OrientedBox

            box = OrientedBox([0, 0, 0], size, q)
            verts = box.local_vertices()
            w, c = forward_contact(head, rng.normal(size=5), verts)
            assert np.all(w.value >= 0)
            assert abs(w.value.sum() - 1.0) < 1e-12
            local = np.abs(c.value @ box.rotation) / (0.5 * size)
            assert local.max() <= 1.0 + 1e-9

    def test_vertex_permutation_consistency(self):
        rng = np.random.default_rng(11)
        head = ContactHead.init(5, seed=13)
        for _ in range(100):
            verts = rng.normal(size=(8, 3))
            feat = rng.normal(size=5)
            w0, c0 = forward_contact(head, feat, verts)
            perm = rng.permutation(8)
            w1, c1 = forward_contact(head, feat, verts[perm])
            assert np.abs(w1.value - w0.value[perm]).max() < 1e-12
            assert np.abs(c1.value - c0.value).max() < 1e-12

    def test_position_loss_gradient_through_head(self):
        rng = np.random.default_rng(12)
        head = ContactHead.init(4, hidden=(6,), vertex_hidden=(6, 6), seed=14)
        feats = rng.normal(size=(2, 4))
        va = rng.normal(size=(2, 8, 3))
        vb = rng.normal(size=(2, 8, 3))
        gt = rng.normal(size=(2, 3))

        def loss():
            _, ca = contact_forward_batch(head, feats, va)
            _, cb = contact_forward_batch(head, feats, vb)
            return ((ca - cb - gt) ** 2).mean()

        report = grad_check(loss, head.parameters(), h=1e-5, tol=1e-4)
        assert report.ok, str(report)


class TestRelationAndVectorHeads:
    def test_untrained_zero_head_scores_half(self):
        head = RelationHead.init(6, seed=15)
        head.mlp.zero_last_layer()
        assert relation_score(head, np.ones(6)) == 0.5

    def test_bce_matches_reference(self):
        rng = np.random.default_rng(13)
        logits = DiffTensor(rng.normal(size=8))
        labels = rng.integers(0, 2, size=8).astype(float)
        got = float(bce_with_logits(logits, labels))
        p = 1 / (1 + np.exp(-logits.value))
        ref = -(labels * np.log(p) + (1 - labels) * np.log(1 - p)).mean()
        assert got == pytest.approx(ref, rel=1e-12)

    def test_bce_gradient(self):
        rng = np.random.default_rng(14)
        head = RelationHead.init(4, hidden=(6,), seed=16)
        feats = rng.normal(size=(5, 4))
        labels = rng.integers(0, 2, size=5).astype(float)

        def loss():
            return bce_with_logits(relation_logits_batch(head, feats), labels)

        assert grad_check(loss, head.parameters(), h=1e-5, tol=1e-4).ok

    def test_zero_vector_head_outputs_origin(self):
        head = VectorHead.init(5, seed=17)
        head.mlp.zero_last_layer()
        out = vector_forward_batch(head, np.ones((3, 5))).value
        assert np.array_equal(out, np.zeros((3, 3)))
