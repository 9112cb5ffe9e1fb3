"""Procedural part-based shapes: chair, table, cabinet, bed.

Each archetype is assembled from axis-aligned boxes with exact
face-to-face contacts, then posed with a random yaw/tilt and world
translation.  Construction ranges below are repo constants chosen so the
four archetypes share part-level statistics (slats, prolate legs,
panels) while differing in joint topology, which is what makes
cross-archetype evaluation meaningful.

Ground truth carried per shape: semantic tags, translational-symmetry
groups, adjacency edges, and one world contact point per edge.  Part
centers are re-derived once through the contact/tree arithmetic so that
reassembling the shape from its own contacts reproduces the stored
centers to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..assembly import build_part_tree, contact_weights_for_point, relative_from_contacts
from ..geometry import (
    OrientedBox,
    PROPER_SIGNED_PERMUTATIONS,
    axis_angle_matrix,
    matrix_to_quat,
    quat_to_matrix,
)

ARCHETYPES = ("chair", "table", "cabinet", "bed")

# Construction ranges (world units; shapes stand on z = 0 before posing).
CHAIR_SEAT_WIDTH = (0.85, 1.25)
CHAIR_SEAT_DEPTH = (0.85, 1.25)
CHAIR_SEAT_THICKNESS = (0.08, 0.14)
CHAIR_SEAT_HEIGHT = (0.85, 1.15)
CHAIR_LEG_CROSS = (0.06, 0.11)
CHAIR_BACK_HEIGHT = (0.75, 1.10)
CHAIR_BACK_THICKNESS = (0.06, 0.10)
CHAIR_ARM_PROB = 0.4
CHAIR_STRETCHER_PROB = 0.4
CHAIR_CUSHION_PROB = 0.35

TABLE_TOP_WIDTH = (1.10, 1.90)
TABLE_TOP_DEPTH = (0.70, 1.30)
TABLE_TOP_THICKNESS = (0.05, 0.10)
TABLE_HEIGHT = (0.70, 1.00)
TABLE_LEG_CROSS = (0.07, 0.12)
TABLE_RAIL_PROB = 0.5
TABLE_SHELF_PROB = 0.4

CABINET_WIDTH = (0.80, 1.40)
CABINET_DEPTH = (0.35, 0.55)
CABINET_HEIGHT = (1.00, 1.80)
CABINET_PANEL_T = (0.02, 0.04)
CABINET_SHELVES = (1, 3)
CABINET_DOOR_PROB = 0.4

BED_WIDTH = (1.00, 1.50)
BED_LENGTH = (1.90, 2.20)
BED_BASE_THICKNESS = (0.15, 0.25)
BED_BASE_HEIGHT = (0.35, 0.50)
BED_LEG_CROSS = (0.07, 0.12)
BED_FOOTBOARD_PROB = 0.5

TILT_MAX_DEG = 25.0
CONTACT_TOL = 1e-9


@dataclass
class PartShape:
    """One object: labeled boxes plus GT relationships."""

    parts: list
    tags: list
    groups: tuple
    edges: tuple
    contacts: dict
    archetype: str

    @property
    def boxes(self) -> list:
        return self.parts

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    def volumes(self) -> np.ndarray:
        return np.array([b.volume for b in self.parts])

    def gt_tree(self):
        return build_part_tree(list(self.edges), self.volumes())

    def gt_contact_weights(self) -> dict:
        """Trilinear vertex weights for each edge's stored contact point."""
        out = {}
        for (i, j), point in self.contacts.items():
            out[(i, j)] = (
                contact_weights_for_point(self.parts[i], point),
                contact_weights_for_point(self.parts[j], point),
            )
        return out


class _Builder:
    """Collects axis-aligned parts, then derives edges/contacts and poses them."""

    def __init__(self):
        self.centers = []
        self.sizes = []
        self.tags = []
        self.groups = []

    def add(self, tag: str, center, size) -> int:
        self.centers.append(np.asarray(center, dtype=np.float64))
        self.sizes.append(np.asarray(size, dtype=np.float64))
        self.tags.append(tag)
        return len(self.centers) - 1

    def add_group(self, indices):
        self.groups.append(tuple(sorted(indices)))

    def _axis_aligned_edges_contacts(self):
        n = len(self.centers)
        lo = [c - 0.5 * s for c, s in zip(self.centers, self.sizes)]
        hi = [c + 0.5 * s for c, s in zip(self.centers, self.sizes)]
        edges, contacts = [], {}
        for i in range(n):
            for j in range(i + 1, n):
                gaps = np.maximum(lo[i] - hi[j], lo[j] - hi[i])
                if gaps.max() <= CONTACT_TOL:
                    edges.append((i, j))
                    mid_lo = np.maximum(lo[i], lo[j])
                    mid_hi = np.minimum(hi[i], hi[j])
                    contacts[(i, j)] = 0.5 * (mid_lo + mid_hi)
        return tuple(edges), contacts

    def finish(self, rng: np.random.Generator, archetype: str, translation_scale: float) -> PartShape:
        edges, contacts = self._axis_aligned_edges_contacts()
        # pose: full yaw, slight tilt, random world offset
        yaw = axis_angle_matrix([0, 0, 1], rng.uniform(0.0, 2 * np.pi))
        azim = rng.uniform(0.0, 2 * np.pi)
        tilt_axis = np.array([np.cos(azim), np.sin(azim), 0.0])
        tilt = axis_angle_matrix(tilt_axis, np.radians(rng.uniform(0.0, TILT_MAX_DEG)))
        R = tilt @ yaw
        t = rng.uniform(-translation_scale, translation_scale, size=3)
        parts = [
            OrientedBox.from_rotation(R @ c + t, s, R) for c, s in zip(self.centers, self.sizes)
        ]
        contacts = {e: R @ p + t for e, p in contacts.items()}
        grouped = set(i for g in self.groups for i in g)
        groups = tuple(self.groups) + tuple((i,) for i in range(len(parts)) if i not in grouped)
        shape = PartShape(parts, list(self.tags), groups, edges, contacts, archetype)
        return _recenter_through_contacts(shape)


def _recenter_through_contacts(shape: PartShape) -> PartShape:
    """Re-derive centers from the contact arithmetic so GT is self-consistent.

    Children are re-placed as parent + contact offset in tree order; the
    adjustment is at machine-epsilon scale but makes assembly from GT
    contacts reproduce the stored centers (up to the root translation)
    exactly rather than merely approximately.
    """
    tree = shape.gt_tree()
    weights = shape.gt_contact_weights()
    centers = [b.center.copy() for b in shape.parts]
    for parent, child in tree.edges():
        key = (parent, child) if (parent, child) in weights else (child, parent)
        wp, wc = weights[key] if key == (parent, child) else weights[key][::-1]
        off = relative_from_contacts(wp, wc, shape.parts[parent], shape.parts[child])
        centers[child] = centers[parent] + off
    parts = [
        OrientedBox.from_rotation(c, b.size, b.rotation) for c, b in zip(centers, shape.parts)
    ]
    return replace(shape, parts=parts)


def _u(rng, lohi):
    return rng.uniform(*lohi)


def _chair(rng: np.random.Generator) -> _Builder:
    b = _Builder()
    w, d = _u(rng, CHAIR_SEAT_WIDTH), _u(rng, CHAIR_SEAT_DEPTH)
    t = _u(rng, CHAIR_SEAT_THICKNESS)
    h = _u(rng, CHAIR_SEAT_HEIGHT)
    a = _u(rng, CHAIR_LEG_CROSS)
    inset = a / 2 + rng.uniform(0.01, 0.04)
    b.add("seat", [0, 0, h - t / 2], [w, d, t])
    leg_h = h - t
    leg_ids = []
    xs, ys = w / 2 - inset, d / 2 - inset
    for sx in (-1, 1):
        for sy in (-1, 1):
            leg_ids.append(b.add("leg", [sx * xs, sy * ys, leg_h / 2], [a, a, leg_h]))
    b.add_group(leg_ids)
    hb = _u(rng, CHAIR_BACK_HEIGHT)
    tb = _u(rng, CHAIR_BACK_THICKNESS)
    wb = w * rng.uniform(0.85, 1.0)
    b.add("back", [0, -d / 2 + tb / 2, h + hb / 2], [wb, tb, hb])
    if rng.uniform() < CHAIR_ARM_PROB:
        aa = rng.uniform(0.05, 0.09)
        ha = rng.uniform(0.18, 0.3)
        arm_ids = [
            b.add("arm", [sx * (w / 2 - aa / 2), 0.05 * d, h + ha / 2], [aa, 0.55 * d, ha])
            for sx in (-1, 1)
        ]
        b.add_group(arm_ids)
    if rng.uniform() < CHAIR_STRETCHER_PROB:
        sb = a * rng.uniform(0.7, 1.0)
        zs = rng.uniform(0.15, 0.35) * h
        span = 2 * ys - a
        bar_ids = [
            b.add("stretcher", [sx * xs, 0.0, zs], [sb, span, sb]) for sx in (-1, 1)
        ]
        b.add_group(bar_ids)
    if rng.uniform() < CHAIR_CUSHION_PROB:
        c = rng.uniform(0.28, 0.38)
        ch = c * rng.uniform(0.9, 1.1)
        b.add("cushion", [0, 0.08 * d, h + ch / 2], [c, c * rng.uniform(0.95, 1.05), ch])
    return b


def _table(rng: np.random.Generator) -> _Builder:
    b = _Builder()
    w, d = _u(rng, TABLE_TOP_WIDTH), _u(rng, TABLE_TOP_DEPTH)
    t = _u(rng, TABLE_TOP_THICKNESS)
    h = _u(rng, TABLE_HEIGHT)
    a = _u(rng, TABLE_LEG_CROSS)
    inset = a / 2 + rng.uniform(0.02, 0.06)
    b.add("top", [0, 0, h - t / 2], [w, d, t])
    xs, ys = w / 2 - inset, d / 2 - inset
    leg_h = h - t
    leg_ids = [
        b.add("leg", [sx * xs, sy * ys, leg_h / 2], [a, a, leg_h])
        for sx in (-1, 1)
        for sy in (-1, 1)
    ]
    b.add_group(leg_ids)
    if rng.uniform() < TABLE_RAIL_PROB:
        ra = rng.uniform(0.04, 0.07)
        length = (2 * xs - a) * 0.8
        rail_ids = [
            b.add("rail", [0, sy * ys, h - t - ra / 2], [length, ra, ra]) for sy in (-1, 1)
        ]
        b.add_group(rail_ids)
    if rng.uniform() < TABLE_SHELF_PROB:
        ts = rng.uniform(0.03, 0.06)
        zs = rng.uniform(0.25, 0.45) * h
        b.add("shelf", [0, 0, zs], [2 * xs - a, 2 * ys - a, ts])
    return b


def _cabinet(rng: np.random.Generator) -> _Builder:
    b = _Builder()
    w, d, h = _u(rng, CABINET_WIDTH), _u(rng, CABINET_DEPTH), _u(rng, CABINET_HEIGHT)
    t = _u(rng, CABINET_PANEL_T)
    side_ids = [
        b.add("side", [sx * (w / 2 - t / 2), 0, h / 2], [t, d, h]) for sx in (-1, 1)
    ]
    b.add_group(side_ids)
    inner_w = w - 2 * t
    plate_ids = [
        b.add("top", [0, 0, h - t / 2], [inner_w, d, t]),
        b.add("bottom", [0, 0, t / 2], [inner_w, d, t]),
    ]
    b.add_group(plate_ids)
    b.add("backpanel", [0, -d / 2 + t / 2, h / 2], [inner_w, t, h - 2 * t])
    n_shelves = int(rng.integers(CABINET_SHELVES[0], CABINET_SHELVES[1] + 1))
    zs = np.linspace(0.25, 0.75, n_shelves) * h + rng.uniform(-0.03, 0.03, size=n_shelves) * h
    shelf_ids = [
        b.add("shelf", [0, t / 2, z], [inner_w, d - t, t]) for z in zs
    ]
    if len(shelf_ids) > 1:
        b.add_group(shelf_ids)
    if rng.uniform() < CABINET_DOOR_PROB:
        dh = h * rng.uniform(0.5, 0.8)
        dw = (w - 2 * t) / 2 * rng.uniform(0.85, 0.98)
        door_ids = [
            b.add("door", [sx * (w / 2 - dw / 2), d / 2 + t / 2, h / 2], [dw, t, dh])
            for sx in (-1, 1)
        ]
        b.add_group(door_ids)
    return b


def _bed(rng: np.random.Generator) -> _Builder:
    b = _Builder()
    w, L = _u(rng, BED_WIDTH), _u(rng, BED_LENGTH)
    tb = _u(rng, BED_BASE_THICKNESS)
    hb = _u(rng, BED_BASE_HEIGHT)
    a = _u(rng, BED_LEG_CROSS)
    inset = a / 2 + rng.uniform(0.02, 0.05)
    b.add("base", [0, 0, hb - tb / 2], [w, L, tb])
    xs, ys = w / 2 - inset, L / 2 - inset
    leg_h = hb - tb
    leg_ids = [
        b.add("leg", [sx * xs, sy * ys, leg_h / 2], [a, a, leg_h])
        for sx in (-1, 1)
        for sy in (-1, 1)
    ]
    b.add_group(leg_ids)
    tm = rng.uniform(0.15, 0.25)
    b.add("mattress", [0, 0, hb + tm / 2], [0.95 * w, 0.95 * L, tm])
    th = rng.uniform(0.04, 0.08)
    hh = rng.uniform(0.5, 0.9)
    b.add("headboard", [0, -L / 2 - th / 2, hb - tb + hh / 2], [w, th, hh])
    if rng.uniform() < BED_FOOTBOARD_PROB:
        hf = rng.uniform(0.2, 0.4)
        b.add("footboard", [0, L / 2 + th / 2, hb - tb + hf / 2], [w, th, hf])
    return b


_BUILDERS = {"chair": _chair, "table": _table, "cabinet": _cabinet, "bed": _bed}


def generate_shape(archetype: str, seed, translation_scale: float = 1.5) -> PartShape:
    """Build one posed PartShape; deterministic per (archetype, seed)."""
    if archetype not in _BUILDERS:
        raise ValueError(f"unknown archetype {archetype!r}; choose from {ARCHETYPES}")
    rng = np.random.default_rng(seed)
    builder = _BUILDERS[archetype](rng)
    return builder.finish(rng, archetype, translation_scale)


def randomize_gt_rotation_labels(shape: PartShape, seed) -> PartShape:
    """Relabel each part's rotation by a random proper signed permutation.

    Simulates the axis order/sign ambiguity of PCA-derived labels: each
    part's quaternion is right-multiplied by one of the 24 proper signed
    permutations (with the size vector permuted to match), so the box
    geometry is untouched while naive elementwise rotation supervision
    becomes inconsistent.
    """
    rng = np.random.default_rng(seed)
    parts = []
    for box in shape.parts:
        G = PROPER_SIGNED_PERMUTATIONS[rng.integers(0, 24)]
        R = box.rotation @ G
        size = np.abs(G.T) @ box.size
        parts.append(OrientedBox.from_rotation(box.center, size, R))
    return replace(shape, parts=parts)


def audit_shape(shape: PartShape, gap_tol: float = 1e-6) -> list:
    """Check all generator postconditions; returns a list of violations."""
    from ..relations import box_min_distance, oracle_translational_symmetry

    problems = []
    if not 4 <= shape.n_parts <= 20:
        problems.append(f"part count {shape.n_parts} outside [4, 20]")
    for g in shape.groups:
        for i in g:
            for j in g:
                if i < j and not oracle_translational_symmetry(
                    shape.parts[i], shape.parts[j], tol=gap_tol
                ):
                    problems.append(f"group pair ({i},{j}) fails symmetry oracle")
    edge_set = set(shape.edges)
    for i, j in shape.edges:
        d = box_min_distance(shape.parts[i], shape.parts[j])
        if d > gap_tol:
            problems.append(f"edge ({i},{j}) gap {d:.2e} exceeds {gap_tol:.0e}")
    for (i, j), p in shape.contacts.items():
        for k in (i, j):
            if not shape.parts[k].contains(p, tol=1e-7):
                problems.append(f"contact of edge ({i},{j}) outside part {k}")
    for i in range(shape.n_parts):
        for j in range(i + 1, shape.n_parts):
            if (i, j) not in edge_set:
                d = box_min_distance(shape.parts[i], shape.parts[j])
                if d <= gap_tol:
                    problems.append(f"non-edge pair ({i},{j}) touches (gap {d:.2e})")
    # GT self-consistency: reassembling from contacts reproduces centers
    tree = shape.gt_tree()
    weights = shape.gt_contact_weights()
    for parent, child in tree.edges():
        key = (parent, child) if (parent, child) in weights else (child, parent)
        wp, wc = weights[key] if key == (parent, child) else weights[key][::-1]
        off = relative_from_contacts(wp, wc, shape.parts[parent], shape.parts[child])
        got = shape.parts[child].center - shape.parts[parent].center
        if np.abs(got - off).max() > 1e-9:
            problems.append(f"edge ({parent},{child}) offset mismatch")
    return problems
