"""Part assembly: connectivity tree, contact points, and shape placement.

A contact point is a convex combination of a box's 8 vertices.  With both
endpoints of a tree edge expressing the same world point in their own
part-centered (world-aligned) frames, the relative center offset is the
difference of the two combinations; traversing the tree accumulates the
offsets from the root (placed at the origin, one root per connected
component).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CORNER_SIGNS, OrientedBox
from .nets.heads import vector_forward_batch


@dataclass(frozen=True)
class PartTree:
    """Spanning forest over the adjacency graph.

    `parents[i]` is the parent part index or -1 for roots; `order` traces
    insertion (roots included) so traversal can replay construction.
    """

    parents: tuple
    roots: tuple
    order: tuple

    @property
    def n_parts(self) -> int:
        return len(self.parents)

    def edges(self) -> list:
        """(parent, child) pairs in insertion order."""
        return [(self.parents[i], i) for i in self.order if self.parents[i] >= 0]

    def component_of(self) -> list:
        comp = [-1] * self.n_parts
        for r_index, root in enumerate(self.roots):
            comp[root] = r_index
        for i in self.order:
            p = self.parents[i]
            if p >= 0:
                comp[i] = comp[p]
        return comp


def build_part_tree(adjacency, volumes) -> PartTree:
    """Greedy spanning forest: largest-volume roots, 1-hop largest-first growth.

    `adjacency` is a list of undirected (i, j) pairs that passed the
    adjacency threshold.  Volume ties break toward the lower part index;
    when a new node has several tree neighbors, the largest-volume one
    (same tie-break) becomes its parent.  Each connected component gets
    its own root.
    """
    volumes = np.asarray(volumes, dtype=np.float64)
    n = volumes.shape[0]
    if np.any(volumes <= 0):
        raise ValueError("volumes must be positive")
    neighbors = [set() for _ in range(n)]
    for i, j in adjacency:
        if i == j:
            raise ValueError("self-adjacency is not allowed")
        neighbors[i].add(j)
        neighbors[j].add(i)

    def rank(k):
        return (-volumes[k], k)

    parents = [-1] * n
    roots, order = [], []
    remaining = set(range(n))
    while remaining:
        root = min(remaining, key=rank)
        remaining.discard(root)
        roots.append(root)
        order.append(root)
        in_tree = {root}
        while True:
            frontier = [k for k in remaining if neighbors[k] & in_tree]
            if not frontier:
                break
            nxt = min(frontier, key=rank)
            parent = min(neighbors[nxt] & in_tree, key=rank)
            parents[nxt] = parent
            remaining.discard(nxt)
            in_tree.add(nxt)
            order.append(nxt)
    return PartTree(tuple(parents), tuple(roots), tuple(order))


@dataclass(frozen=True)
class ContactAssignment:
    """Per-tree-edge vertex weights: (parent, child) -> (w_parent, w_child)."""

    weights: dict

    def __post_init__(self):
        for edge, (wp, wc) in self.weights.items():
            for w in (wp, wc):
                w = np.asarray(w)
                if w.shape != (8,) or np.any(w < -1e-9) or abs(float(w.sum()) - 1.0) > 1e-6:
                    raise ValueError(f"edge {edge}: weights must lie on the 8-simplex")

    def for_edge(self, parent: int, child: int):
        return self.weights[(parent, child)]


def contact_weights_for_point(box: OrientedBox, point) -> np.ndarray:
    """Exact convex-combination weights reproducing `point` inside `box`.

    Trilinear coordinates along the box axes; points outside are clamped
    onto the box first.  Weights are nonnegative and sum to 1 and satisfy
    sum_j w_j v_j = point for interior points.
    """
    local = (np.asarray(point, dtype=np.float64) - box.center) @ box.rotation
    alpha = np.clip(local / (0.5 * box.size), -1.0, 1.0)
    w = np.prod((1.0 + CORNER_SIGNS * alpha) / 2.0, axis=1)
    return w / w.sum()


def relative_from_contacts(w1, w2, box1: OrientedBox, box2: OrientedBox) -> np.ndarray:
    """Relative center offset from part 1 to part 2 given contact weights.

    Both weight vectors describe the same world contact point in the two
    part-centered frames, so offset = sum_j w1_j v1_j - sum_j w2_j v2_j
    with vertices in part-local (center-subtracted, world-aligned) frames.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    c1 = w1 @ box1.local_vertices()
    c2 = w2 @ box2.local_vertices()
    return c1 - c2


@dataclass(frozen=True)
class PlacedShape:
    """Boxes with resolved world centers plus the tree used to place them."""

    boxes: tuple
    tree: PartTree

    @property
    def centers(self) -> np.ndarray:
        return np.stack([b.center for b in self.boxes])


def assemble(tree: PartTree, boxes, contacts: ContactAssignment) -> PlacedShape:
    """Place parts by accumulating contact-derived offsets over the tree.

    Input box centers are ignored; each component's root lands at the
    origin.
    """
    offsets = {}
    for parent, child in tree.edges():
        wp, wc = contacts.for_edge(parent, child)
        offsets[(parent, child)] = relative_from_contacts(wp, wc, boxes[parent], boxes[child])
    return assemble_from_offsets(tree, boxes, offsets)


def assemble_from_offsets(tree: PartTree, boxes, offsets: dict) -> PlacedShape:
    """Place parts from per-edge (parent -> child) center offsets."""
    centers = np.zeros((tree.n_parts, 3))
    for i in tree.order:
        p = tree.parents[i]
        if p < 0:
            centers[i] = 0.0
        else:
            centers[i] = centers[p] + offsets[(p, i)]
    placed = tuple(
        OrientedBox(centers[i], boxes[i].size, boxes[i].quaternion) for i in range(tree.n_parts)
    )
    return PlacedShape(placed, tree)


def place_at_centers(boxes, centers, tree: PartTree | None = None) -> PlacedShape:
    """Place parts at directly regressed centers (absolute-position baseline)."""
    centers = np.asarray(centers, dtype=np.float64)
    if tree is None:
        tree = build_part_tree([], [b.volume for b in boxes])
    placed = tuple(
        OrientedBox(centers[i], boxes[i].size, boxes[i].quaternion) for i in range(len(boxes))
    )
    return PlacedShape(placed, tree)


def offset_bound(box1: OrientedBox, box2: OrientedBox) -> float:
    """Upper bound on any contact-derived offset: sum of circumradii."""
    return box1.circumradius + box2.circumradius


def absolute_position_baseline(head, feats) -> np.ndarray:
    """Directly regressed per-part world centers (ablation comparator)."""
    return vector_forward_batch(head, np.asarray(feats, dtype=np.float64)).value


def center_offset_baseline(head, pair_feats) -> np.ndarray:
    """Directly regressed per-edge center offsets (ablation comparator)."""
    return vector_forward_batch(head, np.asarray(pair_feats, dtype=np.float64)).value
