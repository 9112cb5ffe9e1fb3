import numpy as np
import pytest

from partbox.assembly import (
    ContactAssignment,
    PartTree,
    assemble,
    assemble_from_offsets,
    build_part_tree,
    contact_weights_for_point,
    offset_bound,
    place_at_centers,
    relative_from_contacts,
)
from partbox.geometry import OrientedBox, random_rotation


def cube(center, edge=1.0, quat=(1, 0, 0, 0)):
    return OrientedBox(center, [edge] * 3, quat)


class TestPartTree:
    def test_chain_hand_trace(self):
        # volumes A:8 B:4 C:1, edges A-B, B-C -> root A, B->A, C->B
        tree = build_part_tree([(0, 1), (1, 2)], volumes=[8.0, 4.0, 1.0])
        assert tree.roots == (0,)
        assert tree.parents == (-1, 0, 1)
        assert tree.order == (0, 1, 2)

    def test_no_edges_gives_singleton_forest(self):
        tree = build_part_tree([], volumes=[1.0, 2.0, 3.0])
        assert len(tree.roots) == 3
        assert all(p == -1 for p in tree.parents)
        assert tree.edges() == []

    def test_star_with_small_center(self):
        # star: center part 0 (smallest), leaves 1..3; largest leaf is root,
        # center joins second, remaining leaves attach through the center
        edges = [(0, 1), (0, 2), (0, 3)]
        volumes = [0.5, 3.0, 2.0, 1.0]
        tree = build_part_tree(edges, volumes)
        assert tree.roots == (1,)
        assert tree.parents[0] == 1
        assert tree.parents[2] == 0
        assert tree.parents[3] == 0
        assert tree.order == (1, 0, 2, 3)

    def test_volume_ties_break_by_lower_index(self):
        tree = build_part_tree([(0, 1), (1, 2), (0, 2)], volumes=[2.0, 2.0, 2.0])
        assert tree.roots == (0,)
        assert tree.parents[1] == 0
        assert tree.parents[2] == 0

    def test_two_components(self):
        tree = build_part_tree([(0, 1), (2, 3)], volumes=[1.0, 5.0, 4.0, 2.0])
        assert set(tree.roots) == {1, 2}
        comp = tree.component_of()
        assert comp[0] == comp[1]
        assert comp[2] == comp[3]
        assert comp[0] != comp[2]

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 10))
            edges = [
                (i, j)
                for i in range(n)
                for j in range(i + 1, n)
                if rng.uniform() < 0.4
            ]
            volumes = rng.uniform(0.1, 5.0, size=n)
            t1 = build_part_tree(edges, volumes)
            t2 = build_part_tree(list(edges), volumes.copy())
            assert t1 == t2

    def test_rejects_nonpositive_volume(self):
        with pytest.raises(ValueError):
            build_part_tree([], volumes=[1.0, 0.0])


class TestContactWeights:
    def test_interior_point_reproduced(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            box = OrientedBox(rng.normal(size=3), rng.uniform(0.2, 2, 3), rng.normal(size=4))
            alpha = rng.uniform(-1, 1, size=3)
            point = box.center + (alpha * 0.5 * box.size) @ box.rotation.T
            w = contact_weights_for_point(box, point)
            assert np.all(w >= 0)
            assert w.sum() == pytest.approx(1.0, abs=1e-12)
            rebuilt = w @ box.vertices()
            assert np.abs(rebuilt - point).max() < 1e-9

    def test_outside_point_clamped_onto_box(self):
        box = cube([0, 0, 0])
        w = contact_weights_for_point(box, [5.0, 0.0, 0.0])
        rebuilt = w @ box.vertices()
        assert np.abs(rebuilt - [0.5, 0.0, 0.0]).max() < 1e-12


class TestRelativeFromContacts:
    def test_spec_example(self):
        # c1 = (0.5,0,0), c2 = (-0.5,0,0) -> relative position (1,0,0)
        b1 = cube([0, 0, 0])
        b2 = cube([0, 0, 0])
        w1 = contact_weights_for_point(cube([0, 0, 0]), [0.5, 0, 0])
        w2 = contact_weights_for_point(cube([0, 0, 0]), [-0.5, 0, 0])
        rel = relative_from_contacts(w1, w2, b1, b2)
        assert np.abs(rel - [1.0, 0, 0]).max() < 1e-12

    def test_uniform_weights_give_zero(self):
        w = np.full(8, 0.125)
        rel = relative_from_contacts(w, w, cube([3, 1, 2]), cube([-1, 0, 5]))
        assert np.abs(rel).max() < 1e-15

    def test_recovers_known_touching_offset(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            b1 = OrientedBox(rng.normal(size=3), rng.uniform(0.3, 1.5, 3), rng.normal(size=4))
            # place b2 so they touch at a known point on b1's surface
            R = random_rotation(rng)
            s2 = rng.uniform(0.3, 1.5, size=3)
            face_point = b1.center + (np.array([0.5, 0, 0]) * b1.size) @ b1.rotation.T
            corner_local = (np.array([-0.5, -0.5, -0.5]) * s2) @ R.T
            c2 = face_point - corner_local
            b2 = OrientedBox(c2, s2, __import__("partbox.geometry", fromlist=["matrix_to_quat"]).matrix_to_quat(R))
            w1 = contact_weights_for_point(b1, face_point)
            w2 = contact_weights_for_point(b2, face_point)
            rel = relative_from_contacts(w1, w2, b1, b2)
            assert np.abs(rel - (b2.center - b1.center)).max() < 1e-9

    def test_circumradius_bound(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            b1 = OrientedBox(rng.normal(size=3), rng.uniform(0.1, 2, 3), rng.normal(size=4))
            b2 = OrientedBox(rng.normal(size=3), rng.uniform(0.1, 2, 3), rng.normal(size=4))
            w1 = rng.dirichlet(np.ones(8))
            w2 = rng.dirichlet(np.ones(8))
            rel = relative_from_contacts(w1, w2, b1, b2)
            assert np.linalg.norm(rel) <= offset_bound(b1, b2) + 1e-12


class TestAssemble:
    def test_single_part_at_origin(self):
        tree = build_part_tree([], volumes=[1.0])
        placed = assemble(tree, [cube([5, 5, 5])], ContactAssignment({}))
        assert np.array_equal(placed.boxes[0].center, np.zeros(3))

    def test_chain_reproduces_gt_offsets(self):
        rng = np.random.default_rng(4)
        # three boxes in a touching chain along x
        sizes = [np.array([1.0, 1, 1]), np.array([0.8, 0.8, 0.8]), np.array([0.5, 0.5, 0.5])]
        centers = [np.zeros(3)]
        centers.append(centers[0] + [0.5 + 0.4, 0.1, 0.0])
        centers.append(centers[1] + [0.4 + 0.25, -0.05, 0.0])
        boxes = [OrientedBox(c, s, [1, 0, 0, 0]) for c, s in zip(centers, sizes)]
        contact01 = np.array([centers[0][0] + 0.5, 0.1, 0.0])
        contact12 = np.array([centers[1][0] + 0.4, 0.0, 0.0])
        tree = build_part_tree([(0, 1), (1, 2)], [b.volume for b in boxes])
        contacts = ContactAssignment(
            {
                (0, 1): (
                    contact_weights_for_point(boxes[0], contact01),
                    contact_weights_for_point(boxes[1], contact01),
                ),
                (1, 2): (
                    contact_weights_for_point(boxes[1], contact12),
                    contact_weights_for_point(boxes[2], contact12),
                ),
            }
        )
        placed = assemble(tree, boxes, contacts)
        # pairwise offsets match GT to 1e-9; global EMD 0 after translation
        for p, c in tree.edges():
            got = placed.boxes[c].center - placed.boxes[p].center
            want = centers[c] - centers[p]
            assert np.abs(got - want).max() < 1e-9
        shift = centers[0] - placed.boxes[0].center
        for i in range(3):
            assert np.abs(placed.boxes[i].center + shift - centers[i]).max() < 1e-9

    def test_tree_edge_invariant(self):
        rng = np.random.default_rng(5)
        boxes = [
            OrientedBox(rng.normal(size=3), rng.uniform(0.3, 1, 3), rng.normal(size=4))
            for _ in range(4)
        ]
        tree = build_part_tree([(0, 1), (0, 2), (2, 3)], [b.volume for b in boxes])
        contacts = ContactAssignment(
            {
                e: (rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8)))
                for e in tree.edges()
            }
        )
        placed = assemble(tree, boxes, contacts)
        for p, c in tree.edges():
            wp, wc = contacts.for_edge(p, c)
            rel = relative_from_contacts(wp, wc, boxes[p], boxes[c])
            got = placed.boxes[c].center - placed.boxes[p].center
            assert np.abs(got - rel).max() < 1e-9

    def test_two_components_independent_origins(self):
        boxes = [cube([0, 0, 0]), cube([9, 9, 9]), cube([5, 5, 5]), cube([7, 7, 7])]
        tree = build_part_tree([(0, 1), (2, 3)], [4.0, 3.0, 2.0, 1.0])
        offsets = {e: np.array([1.0, 0, 0]) for e in tree.edges()}
        placed = assemble_from_offsets(tree, boxes, offsets)
        for r in tree.roots:
            assert np.array_equal(placed.boxes[r].center, np.zeros(3))

    def test_place_at_centers(self):
        boxes = [cube([0, 0, 0]), cube([1, 1, 1])]
        placed = place_at_centers(boxes, [[0.5, 0, 0], [2.0, 1, 0]])
        assert np.array_equal(placed.centers, np.array([[0.5, 0, 0], [2.0, 1, 0]]))

    def test_contact_assignment_validates_simplex(self):
        with pytest.raises(ValueError):
            ContactAssignment({(0, 1): (np.full(8, 0.2), np.full(8, 0.125))})
