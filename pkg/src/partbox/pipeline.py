"""Training tasks and the end-to-end prediction pipeline.

Turns a loaded synthetic dataset into per-head training arrays, trains
heads with the seeded minibatch trainer, and runs the full prediction
chain (relations -> grouping -> orientation -> size -> tree -> contacts
-> assembly) either from trained heads or in GT-oracle mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import ContactAssignment, assemble, build_part_tree, place_at_centers
from .evaluation import match_axes
from .geometry import OrientedBox, equivalence_set, geodesic_error
from .losses import (
    LossConfig,
    batched_min_of_n_loss,
    batched_moe_loss,
    batched_rotation_mse,
    chamfer_box_distance,
    l1_vector_error,
)
from .nets.autodiff import DiffTensor
from .nets.checkpoint import assign_named_parameters, load_checkpoint, save_checkpoint
from .nets.heads import (
    ContactHead,
    OrientationHead,
    RelationHead,
    SizeHead,
    VectorHead,
    bce_with_logits,
    contact_forward_batch,
    forward_size,
    normalize_quaternions,
    orientation_forward_batch,
    quats_to_matrices,
    relation_logits_batch,
    vector_forward_batch,
)
from .nets.layers import MlpParams, mlp_forward
from .nets.training import OptimizerConfig, TrainResult, train
from .relations import PartPairScore, cluster_parts
from .synth.dataset import Dataset
from .synth.features import (
    PAIR_FEATURE_DIM,
    PART_FEATURE_DIM,
    PF_CORNERS,
    PF_SIZES,
    SYM_PAIR_FEATURE_DIM,
)

HEAD_KINDS = ("orientation", "size", "contact", "relation", "abs-position", "offset", "joint")

# per-head trainer defaults: lr 1e-3 batch 64 throughout; the orientation
# schedule decays faster than the others
HEAD_OPTIMIZER_DEFAULTS = {
    "orientation": dict(lr=1e-3, batch_size=64, epochs=20, lr_decay=0.7, decay_every=2),
    "size": dict(lr=1e-3, batch_size=64, epochs=60, lr_decay=0.9, decay_every=2),
    "contact": dict(lr=1e-3, batch_size=64, epochs=60, lr_decay=0.9, decay_every=2),
    "relation": dict(lr=1e-3, batch_size=64, epochs=10, lr_decay=0.9, decay_every=2),
    "abs-position": dict(lr=1e-3, batch_size=64, epochs=60, lr_decay=0.9, decay_every=2),
    "offset": dict(lr=1e-3, batch_size=64, epochs=60, lr_decay=0.9, decay_every=2),
    "joint": dict(lr=1e-3, batch_size=64, epochs=20, lr_decay=0.7, decay_every=2),
}


def canonical_axes(R: np.ndarray) -> np.ndarray:
    """Columns of R sign-flipped so the largest-magnitude entry is positive.

    Edge lengths are direction-free, so the size head sees axes in this
    stable form regardless of how the rotation label resolved its signs.
    """
    out = np.array(R, dtype=np.float64, copy=True)
    for k in range(3):
        col = out[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            out[:, k] = -col
    return out


SIZE_AXIS_QUERY_DIM = 4  # unit axis + measured extent cue


def build_head(kind: str, seed: int = 0, n_experts: int = 4):
    if kind == "orientation":
        return OrientationHead.init(PART_FEATURE_DIM, n_experts=n_experts, seed=seed)
    if kind == "size":
        return SizeHead.init(PART_FEATURE_DIM, axis_dim=SIZE_AXIS_QUERY_DIM, seed=seed)
    if kind == "contact":
        return ContactHead.init(PAIR_FEATURE_DIM, seed=seed)
    if kind == "relation":
        return RelationHead.init(SYM_PAIR_FEATURE_DIM, seed=seed)
    if kind == "abs-position":
        return VectorHead.init(PART_FEATURE_DIM, seed=seed)
    if kind == "offset":
        return VectorHead.init(PAIR_FEATURE_DIM, seed=seed)
    if kind == "joint":
        return JointBoxHead.init(PART_FEATURE_DIM, seed=seed)
    raise ValueError(f"unknown head kind {kind!r}")


@dataclass
class JointBoxHead:
    """Joint quaternion + size regressor (the sequential-vs-joint comparator)."""

    trunk: MlpParams
    out: MlpParams

    @classmethod
    def init(cls, feature_dim: int, hidden=(96, 96), seed: int = 0):
        return cls(
            MlpParams.init([feature_dim, *hidden], seed=seed),
            MlpParams.init([hidden[-1], 48, 7], seed=seed + 1),
        )

    def parameters(self) -> list:
        return self.trunk.parameters() + self.out.parameters()

    def named_parameters(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.trunk.weights, self.trunk.biases)):
            out[f"trunk.w{i}"] = w
            out[f"trunk.b{i}"] = b
        for i, (w, b) in enumerate(zip(self.out.weights, self.out.biases)):
            out[f"out.w{i}"] = w
            out[f"out.b{i}"] = b
        return out


def joint_forward_batch(head: JointBoxHead, feats):
    h = mlp_forward(head.trunk, feats, activate_last=True)
    raw = mlp_forward(head.out, h)
    quats = normalize_quaternions(raw[..., :4])
    rotations = quats_to_matrices(quats)
    sizes = raw[..., 4:].softplus()
    return rotations, sizes


# -- task construction --------------------------------------------------------


@dataclass
class OrientationTask:
    features: np.ndarray
    gt_sets: np.ndarray
    gt_rotations: np.ndarray
    meta: list

    def __len__(self):
        return self.features.shape[0]


def build_orientation_task(ds: Dataset, split: str, archetypes=None, mode: str = "all48") -> OrientationTask:
    """One sample per visible part instance (occluded parts are skipped)."""
    feats, sets, rots, meta = [], [], [], []
    for sid, v in ds.samples(split, archetypes):
        shape, view = ds.shapes[sid], ds.views[(sid, v)]
        for p, box in enumerate(shape.parts):
            if view.occluded[p]:
                continue
            feats.append(view.part_features[p])
            R = box.rotation
            sets.append(equivalence_set(R, mode).elements)
            rots.append(R)
            meta.append((sid, v, p))
    if not feats:
        raise ValueError(f"no orientation samples in split {split!r}")
    return OrientationTask(np.stack(feats), np.stack(sets), np.stack(rots), meta)


def size_axis_queries(axes_cols: np.ndarray, member_offsets, visible) -> np.ndarray:
    """Per-axis query rows: [unit axis, measured extent along it].

    The extent cue is the mean over visible members of the corner-offset
    span along the axis (members of a translational group share it); with
    no visible member it is 0 and the head must fall back to priors.
    """
    queries = np.zeros((3, SIZE_AXIS_QUERY_DIM))
    queries[:, :3] = axes_cols.T
    spans = []
    for offsets, vis in zip(member_offsets, visible):
        if not vis:
            continue
        proj = offsets @ axes_cols
        spans.append(proj.max(axis=0) - proj.min(axis=0))
    if spans:
        queries[:, 3] = np.mean(spans, axis=0)
    return queries


@dataclass
class SizeGroupSample:
    member_features: np.ndarray  # (M, F), sorted member index order
    axes: np.ndarray  # (3, SIZE_AXIS_QUERY_DIM) query rows
    target: np.ndarray  # (3,)
    n_members: int
    n_occluded: int
    meta: tuple


@dataclass
class SizeTask:
    samples: list

    def __len__(self):
        return len(self.samples)


def build_size_task(ds: Dataset, split: str, archetypes=None, variant: str = "group") -> SizeTask:
    """Group-based (or unary) size samples; axes/targets from the GT labels.

    The representative is the lowest-index member; its label rotation
    (sign-canonicalized columns) provides the axis queries and its label
    size vector the target, exactly as if the orientation stage had been
    replaced by ground truth.
    """
    if variant not in ("group", "unary"):
        raise ValueError("variant must be 'group' or 'unary'")
    out = []
    for sid, v in ds.samples(split, archetypes):
        shape, view = ds.shapes[sid], ds.views[(sid, v)]
        groups = [(p,) for p in range(shape.n_parts)] if variant == "unary" else shape.groups
        for g in groups:
            members = sorted(g)
            rep = members[0]
            axes_cols = canonical_axes(shape.parts[rep].rotation)
            offsets = [view.part_features[m][PF_CORNERS].reshape(8, 3) for m in members]
            visible = [not view.occluded[m] for m in members]
            target = shape.parts[rep].size
            out.append(
                SizeGroupSample(
                    member_features=view.part_features[members],
                    axes=size_axis_queries(axes_cols, offsets, visible),
                    target=np.array(target),
                    n_members=len(members),
                    n_occluded=int(view.occluded[list(members)].sum()),
                    meta=(sid, v, tuple(members)),
                )
            )
    if not out:
        raise ValueError(f"no size samples in split {split!r}")
    return SizeTask(out)


@dataclass
class PairTask:
    features: np.ndarray
    labels: np.ndarray
    meta: list

    def __len__(self):
        return self.features.shape[0]


def build_relation_task(ds: Dataset, split: str, relationship: str, archetypes=None) -> PairTask:
    """Binary labels per unordered pair: translational symmetry or adjacency."""
    if relationship not in ("symmetry", "adjacency"):
        raise ValueError("relationship must be 'symmetry' or 'adjacency'")
    feats, labels, meta = [], [], []
    for sid, v in ds.samples(split, archetypes):
        shape, view = ds.shapes[sid], ds.views[(sid, v)]
        edge_set = set(shape.edges)
        group_of = {}
        for gi, g in enumerate(shape.groups):
            for p in g:
                group_of[p] = gi
        for i in range(shape.n_parts):
            for j in range(i + 1, shape.n_parts):
                feats.append(view.sym_pair(i, j))
                if relationship == "symmetry":
                    labels.append(1.0 if group_of[i] == group_of[j] else 0.0)
                else:
                    labels.append(1.0 if (i, j) in edge_set else 0.0)
                meta.append((sid, v, i, j))
    return PairTask(np.stack(feats), np.asarray(labels), meta)


@dataclass
class EdgeTask:
    feats_pc: np.ndarray  # ordered parent -> child, (E, F)
    feats_cp: np.ndarray
    verts_p: np.ndarray  # (E, 8, 3) GT local vertices
    verts_c: np.ndarray
    target: np.ndarray  # (E, 3) GT center offset parent -> child
    bounds: np.ndarray  # (E,) circumradius sums
    meta: list

    def __len__(self):
        return self.target.shape[0]


def build_edge_task(ds: Dataset, split: str, archetypes=None) -> EdgeTask:
    """One sample per GT part-tree edge, with GT boxes providing vertices."""
    f_pc, f_cp, vp, vc, tgt, bnd, meta = [], [], [], [], [], [], []
    for sid, v in ds.samples(split, archetypes):
        shape, view = ds.shapes[sid], ds.views[(sid, v)]
        tree = shape.gt_tree()
        for parent, child in tree.edges():
            f_pc.append(view.pair(parent, child))
            f_cp.append(view.pair(child, parent))
            vp.append(shape.parts[parent].local_vertices())
            vc.append(shape.parts[child].local_vertices())
            tgt.append(shape.parts[child].center - shape.parts[parent].center)
            bnd.append(shape.parts[parent].circumradius + shape.parts[child].circumradius)
            meta.append((sid, v, parent, child))
    if not tgt:
        raise ValueError(f"no edge samples in split {split!r}")
    return EdgeTask(
        np.stack(f_pc),
        np.stack(f_cp),
        np.stack(vp),
        np.stack(vc),
        np.stack(tgt),
        np.asarray(bnd),
        meta,
    )


@dataclass
class PartVectorTask:
    features: np.ndarray
    target: np.ndarray
    meta: list

    def __len__(self):
        return self.features.shape[0]


def build_absolute_task(ds: Dataset, split: str, archetypes=None) -> PartVectorTask:
    feats, tgt, meta = [], [], []
    for sid, v in ds.samples(split, archetypes):
        shape, view = ds.shapes[sid], ds.views[(sid, v)]
        for p, box in enumerate(shape.parts):
            feats.append(view.part_features[p])
            tgt.append(box.center)
            meta.append((sid, v, p))
    return PartVectorTask(np.stack(feats), np.stack(tgt), meta)


@dataclass
class JointTask:
    features: np.ndarray
    gt_corners: np.ndarray  # (N, 8, 3) origin-centered GT box corners
    gt_boxes: list
    meta: list

    def __len__(self):
        return self.features.shape[0]


def build_joint_task(ds: Dataset, split: str, archetypes=None) -> JointTask:
    feats, corners, boxes, meta = [], [], [], []
    for sid, v in ds.samples(split, archetypes):
        shape, view = ds.shapes[sid], ds.views[(sid, v)]
        for p, box in enumerate(shape.parts):
            if view.occluded[p]:
                continue
            feats.append(view.part_features[p])
            corners.append(box.local_vertices())
            boxes.append(box)
            meta.append((sid, v, p))
    return JointTask(np.stack(feats), np.stack(corners), boxes, meta)


# -- training objectives -------------------------------------------------------


def orientation_objective(head: OrientationHead, task: OrientationTask, loss_kind: str, cfg: LossConfig):
    def batch_loss(idx):
        rots, probs, _ = orientation_forward_batch(head, task.features[idx])
        if loss_kind == "moe-minn":
            return batched_moe_loss(rots, probs, task.gt_sets[idx], cfg)
        if loss_kind == "minn":
            return batched_min_of_n_loss(rots, task.gt_sets[idx])
        if loss_kind == "mse":
            return batched_rotation_mse(rots, task.gt_rotations[idx])
        raise ValueError(f"unknown orientation loss {loss_kind!r}")

    return batch_loss


def size_objective(head: SizeHead, task: SizeTask):
    def batch_loss(idx):
        losses = []
        for k in idx:
            s = task.samples[int(k)]
            pred = forward_size(head, s.member_features, s.axes)
            losses.append(((pred - s.target) ** 2).mean())
        total = losses[0]
        for term in losses[1:]:
            total = total + term
        return total * (1.0 / len(losses))

    return batch_loss


def relation_objective(head: RelationHead, task: PairTask):
    def batch_loss(idx):
        logits = relation_logits_batch(head, task.features[idx])
        return bce_with_logits(logits, task.labels[idx])

    return batch_loss


def contact_objective(head: ContactHead, task: EdgeTask):
    def batch_loss(idx):
        _, cp = contact_forward_batch(head, task.feats_pc[idx], task.verts_p[idx])
        _, cc = contact_forward_batch(head, task.feats_cp[idx], task.verts_c[idx])
        return ((cp - cc - task.target[idx]) ** 2).mean()

    return batch_loss


def offset_objective(head: VectorHead, task: EdgeTask):
    def batch_loss(idx):
        pred = vector_forward_batch(head, task.feats_pc[idx])
        return ((pred - task.target[idx]) ** 2).mean()

    return batch_loss


def absolute_objective(head: VectorHead, task: PartVectorTask):
    def batch_loss(idx):
        pred = vector_forward_batch(head, task.features[idx])
        return ((pred - task.target[idx]) ** 2).mean()

    return batch_loss


def joint_objective(head: JointBoxHead, task: JointTask):
    def batch_loss(idx):
        rots, sizes = joint_forward_batch(head, task.features[idx])
        from .geometry import CORNER_SIGNS

        B = len(idx)
        corners_local = sizes.reshape(B, 1, 3) * (0.5 * CORNER_SIGNS)
        pred = corners_local @ rots.swapaxes(-1, -2)
        gt = task.gt_corners[idx]
        d2 = ((pred.reshape(B, 8, 1, 3) - gt.reshape(B, 1, 8, 3)) ** 2).sum(axis=3)
        return d2.min(axis=2).mean() + d2.min(axis=1).mean()

    return batch_loss


def make_objective(kind: str, head, task, loss_kind: str = "moe-minn", loss_cfg: LossConfig | None = None):
    loss_cfg = loss_cfg or LossConfig()
    if kind == "orientation":
        return orientation_objective(head, task, loss_kind, loss_cfg)
    if kind == "size":
        return size_objective(head, task)
    if kind == "contact":
        return contact_objective(head, task)
    if kind == "relation":
        return relation_objective(head, task)
    if kind == "abs-position":
        return absolute_objective(head, task)
    if kind == "offset":
        return offset_objective(head, task)
    if kind == "joint":
        return joint_objective(head, task)
    raise ValueError(f"unknown head kind {kind!r}")


def train_head(
    kind: str,
    head,
    task,
    opt_cfg: OptimizerConfig,
    seed: int,
    loss_kind: str = "moe-minn",
    loss_cfg: LossConfig | None = None,
    start_epoch: int = 0,
    optimizer_state: dict | None = None,
) -> TrainResult:
    objective = make_objective(kind, head, task, loss_kind, loss_cfg)
    return train(
        head.parameters(),
        objective,
        len(task),
        opt_cfg,
        seed=seed,
        start_epoch=start_epoch,
        optimizer_state=optimizer_state,
    )


# -- inference ----------------------------------------------------------------


def predict_rotations(head: OrientationHead, features: np.ndarray) -> np.ndarray:
    """Max-probability-expert rotation per feature row."""
    rots, probs, _ = orientation_forward_batch(head, np.atleast_2d(features))
    pick = np.argmax(probs.value, axis=1)
    return rots.value[np.arange(pick.shape[0]), pick]


def predict_relation_scores(head: RelationHead, view, n_parts: int) -> list:
    """Sigmoid scores for every unordered pair (one head, one relationship)."""
    feats = []
    pairs = [(i, j) for i in range(n_parts) for j in range(i + 1, n_parts)]
    for i, j in pairs:
        feats.append(view.sym_pair(i, j))
    logits = relation_logits_batch(head, np.stack(feats))
    return pairs, 1.0 / (1.0 + np.exp(-logits.value))


@dataclass
class HeadBundle:
    orientation: OrientationHead
    size: SizeHead
    contact: ContactHead
    relation_symmetry: RelationHead
    relation_adjacency: RelationHead


def predict_shape(
    bundle: HeadBundle,
    shape,
    view,
    adjacency_threshold: float = 0.7,
    symmetry_threshold: float = 0.9,
):
    """Full trained pipeline for one (shape, view) sample.

    Uses GT part enumeration (stand-in for GT masks); everything else is
    predicted: pair relationships, symmetry groups, per-part rotation,
    group sizes, part tree from predicted volumes, contact points, and
    the assembled placement.
    """
    n = shape.n_parts
    pairs, sym_scores = predict_relation_scores(bundle.relation_symmetry, view, n)
    _, adj_scores = predict_relation_scores(bundle.relation_adjacency, view, n)
    scores = [
        PartPairScore(i, j, float(s), float(a), source="learned")
        for (i, j), s, a in zip(pairs, sym_scores, adj_scores)
    ]
    proxy_volumes = np.prod(view.part_features[:, PF_SIZES], axis=1)
    grouping = cluster_parts(scores, proxy_volumes, symmetry_threshold)

    rotations = predict_rotations(bundle.orientation, view.part_features)

    sizes = np.zeros((n, 3))
    for g in grouping.groups:
        members = sorted(g)
        rep = members[0]
        rep_axes = canonical_axes(rotations[rep])
        offsets = [view.part_features[m][PF_CORNERS].reshape(8, 3) for m in members]
        visible = [not view.occluded[m] for m in members]
        queries = size_axis_queries(rep_axes, offsets, visible)
        group_size = forward_size(bundle.size, view.part_features[members], queries).value
        for m in members:
            perm = match_axes(rotations[m], rep_axes)
            sizes[m] = group_size[perm]

    boxes = [
        OrientedBox.from_rotation(np.zeros(3), sizes[p], rotations[p]) for p in range(n)
    ]
    adjacency = [
        (i, j)
        for (i, j), a in zip(pairs, adj_scores)
        if a >= adjacency_threshold
    ]
    volumes = np.maximum(np.prod(sizes, axis=1), 1e-12)
    tree = build_part_tree(adjacency, volumes)

    weights = {}
    for parent, child in tree.edges():
        w_p, _ = contact_forward_batch(
            bundle.contact,
            view.pair(parent, child).reshape(1, -1),
            boxes[parent].local_vertices().reshape(1, 8, 3),
        )
        w_c, _ = contact_forward_batch(
            bundle.contact,
            view.pair(child, parent).reshape(1, -1),
            boxes[child].local_vertices().reshape(1, 8, 3),
        )
        weights[(parent, child)] = (w_p.value.reshape(8), w_c.value.reshape(8))
    placed = assemble(tree, boxes, ContactAssignment(weights))
    return placed


def gt_oracle_shape(shape):
    """Pipeline identity path: every head replaced by its ground truth."""
    tree = shape.gt_tree()
    weights = shape.gt_contact_weights()
    oriented = {}
    for parent, child in tree.edges():
        key = (parent, child) if (parent, child) in weights else (child, parent)
        wp, wc = weights[key] if key == (parent, child) else weights[key][::-1]
        oriented[(parent, child)] = (wp, wc)
    return assemble(tree, list(shape.parts), ContactAssignment(oriented))


# -- checkpoint plumbing -------------------------------------------------------


def save_head(path, kind: str, head, meta: dict, optimizer_state: dict | None = None):
    arrays = {name: t.value for name, t in head.named_parameters().items()}
    if optimizer_state:
        for k, v in optimizer_state.items():
            arrays[f"__opt__.{k}"] = v
    save_checkpoint(path, kind, arrays, meta)


def load_head(path):
    kind, arrays, meta = load_checkpoint(path)
    head = build_head(
        kind,
        seed=int(meta.get("init_seed", 0)),
        n_experts=int(meta.get("n_experts", 4)),
    )
    params = {k: v for k, v in arrays.items() if not k.startswith("__opt__.")}
    assign_named_parameters(head.named_parameters(), params)
    opt_state = {
        k[len("__opt__.") :]: v for k, v in arrays.items() if k.startswith("__opt__.")
    }
    return kind, head, meta, opt_state
