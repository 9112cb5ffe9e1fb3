"""Experiment drivers: per-head training runs, module evals, and ablations.

Each ablation trains its arms with identical seeds and data and reports a
side-by-side table; the metrics mirror the respective comparison tables
(geodesic degrees for rotation losses, L1 for sizes and offsets, box
Chamfer for joint-vs-sequential).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evaluation import MetricReport, evaluate_dataset
from .geometry import OrientedBox, equivalence_set, geodesic_error
from .losses import LossConfig, chamfer_box_distance, l1_vector_error
from .nets.heads import contact_forward_batch, forward_size, orientation_forward_batch, relation_logits_batch, vector_forward_batch
from .nets.training import OptimizerConfig, TrainResult
from .pipeline import (
    HEAD_OPTIMIZER_DEFAULTS,
    HeadBundle,
    build_absolute_task,
    build_edge_task,
    build_head,
    build_joint_task,
    build_orientation_task,
    build_relation_task,
    build_size_task,
    canonical_axes,
    gt_oracle_shape,
    joint_forward_batch,
    predict_rotations,
    predict_shape,
    train_head,
)
from .synth.dataset import Dataset

ABLATIONS = (
    "rotation-loss",
    "group-size",
    "relative-position",
    "contact-vs-offset",
    "joint-vs-sequential",
)


def optimizer_for(kind: str, overrides: dict | None = None) -> OptimizerConfig:
    opts = dict(HEAD_OPTIMIZER_DEFAULTS[kind])
    for key, value in (overrides or {}).items():
        if value is not None:
            opts[key] = value
    return OptimizerConfig(**opts)


# -- module-level evaluations ---------------------------------------------------


def eval_orientation(head, task) -> float:
    """Mean geodesic error (degrees) of the max-probability expert."""
    rotations = predict_rotations(head, task.features)
    errs = [
        geodesic_error(rotations[i], equivalence_set(task.gt_rotations[i]))
        for i in range(len(task))
    ]
    return float(np.mean(errs))


def eval_size(head, task) -> float:
    """Per-part mean L1 size error (group predictions count once per member)."""
    total, weight = 0.0, 0
    for s in task.samples:
        pred = forward_size(head, s.member_features, s.axes).value
        total += l1_vector_error(pred, s.target) * s.n_members
        weight += s.n_members
    return total / weight


def eval_relation_accuracy(head, task, threshold: float = 0.5) -> float:
    logits = relation_logits_batch(head, task.features).value
    pred = (logits >= np.log(threshold / (1 - threshold))) if threshold != 0.5 else (logits >= 0)
    return float((pred.astype(float) == task.labels).mean())


def eval_contact_offsets(head, task):
    """Predicted offsets per edge plus the circumradius-bound margins."""
    _, cp = contact_forward_batch(head, task.feats_pc, task.verts_p)
    _, cc = contact_forward_batch(head, task.feats_cp, task.verts_c)
    pred = cp.value - cc.value
    l1 = float(np.mean([l1_vector_error(pred[k], task.target[k]) for k in range(len(task))]))
    margins = task.bounds - np.linalg.norm(pred, axis=1)
    return pred, l1, margins


def eval_vector_offsets(head, task) -> float:
    pred = vector_forward_batch(head, task.feats_pc).value
    return float(np.mean([l1_vector_error(pred[k], task.target[k]) for k in range(len(task))]))


def eval_absolute_as_offsets(head, part_task, edge_task) -> float:
    """Edge offsets differenced from absolutely regressed centers."""
    centers = vector_forward_batch(head, part_task.features).value
    index = {meta: k for k, meta in enumerate(part_task.meta)}
    errs = []
    for k, (sid, v, p, c) in enumerate(edge_task.meta):
        cp = centers[index[(sid, v, p)]]
        cc = centers[index[(sid, v, c)]]
        errs.append(l1_vector_error(cc - cp, edge_task.target[k]))
    return float(np.mean(errs))


def eval_absolute_centers(head, part_task) -> float:
    centers = vector_forward_batch(head, part_task.features).value
    return float(np.mean(np.abs(centers - part_task.target)))


def eval_joint(head, task) -> float:
    rotations, sizes = joint_forward_batch(head, task.features)
    R, S = rotations.value, sizes.value
    errs = []
    for k, gt_box in enumerate(task.gt_boxes):
        pred_box = OrientedBox.from_rotation(np.zeros(3), S[k], _orthonormalize(R[k]))
        gt0 = OrientedBox.from_rotation(np.zeros(3), gt_box.size, gt_box.rotation)
        errs.append(chamfer_box_distance(pred_box, gt0))
    return float(np.mean(errs))


def eval_sequential(orientation_head, size_head, task) -> float:
    """Orientation head then unary size head on its predicted axes."""
    from .synth.features import PF_CORNERS
    from .pipeline import size_axis_queries

    rotations = predict_rotations(orientation_head, task.features)
    errs = []
    for k, gt_box in enumerate(task.gt_boxes):
        axes = canonical_axes(rotations[k])
        offsets = [task.features[k][PF_CORNERS].reshape(8, 3)]
        queries = size_axis_queries(axes, offsets, [True])
        size = forward_size(size_head, task.features[k], queries).value
        pred_box = OrientedBox.from_rotation(np.zeros(3), size, rotations[k])
        gt0 = OrientedBox.from_rotation(np.zeros(3), gt_box.size, gt_box.rotation)
        errs.append(chamfer_box_distance(pred_box, gt0))
    return float(np.mean(errs))


def _orthonormalize(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, 2] = -U[:, 2]
        R = U @ Vt
    return R


# -- ablations -------------------------------------------------------------------


@dataclass
class AblationResult:
    name: str
    rows: list  # dicts: {"arm": ..., "seed<k>": value..., "mean": ...}
    value_keys: list
    metric: str
    curves: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def arm_means(self) -> dict:
        return {r["arm"]: r["mean"] for r in self.rows}


def _rows_from(per_arm: dict, seeds) -> tuple:
    keys = [f"seed{Sk}" for Sk in seeds] + ["mean"]
    rows = []
    for arm, values in per_arm.items():
        row = {"arm": arm}
        for Sk, value in zip(seeds, values):
            row[f"seed{Sk}"] = value
        row["mean"] = float(np.mean(values))
        rows.append(row)
    return rows, keys


def rotation_loss_ablation(
    ds: Dataset,
    seeds=(1, 2, 3),
    epochs: int | None = None,
    loss_cfg: LossConfig | None = None,
    archetypes=("chair",),
    n_experts: int = 4,
) -> AblationResult:
    """MSE vs MinN-MSE vs MoE-MinN-MSE, mean geodesic degrees on held-out shapes."""
    loss_cfg = loss_cfg or LossConfig()
    train_task = build_orientation_task(ds, "train", archetypes, loss_cfg.mode)
    val_task = build_orientation_task(ds, "val", archetypes, loss_cfg.mode)
    test_task = build_orientation_task(ds, "test", archetypes, loss_cfg.mode)
    eval_task = _concat_orientation(val_task, test_task)
    arms = (("mse", 1), ("minn", 1), ("moe-minn", n_experts))
    per_arm = {arm: [] for arm, _ in arms}
    curves = {}
    for seed in seeds:
        for arm, k in arms:
            head = build_head("orientation", seed=seed, n_experts=k)
            opt = optimizer_for("orientation", {"epochs": epochs, "decay_every": 10})
            result = train_head(
                "orientation", head, train_task, opt, seed=seed + 100, loss_kind=arm, loss_cfg=loss_cfg
            )
            per_arm[arm].append(eval_orientation(head, eval_task))
            curves[f"{arm}-seed{seed}"] = result.loss_curve
    rows, keys = _rows_from(per_arm, seeds)
    return AblationResult("rotation-loss", rows, keys, "geodesic_deg", curves)


def _concat_orientation(a, b):
    from .pipeline import OrientationTask

    return OrientationTask(
        np.concatenate([a.features, b.features]),
        np.concatenate([a.gt_sets, b.gt_sets]),
        np.concatenate([a.gt_rotations, b.gt_rotations]),
        a.meta + b.meta,
    )


def group_size_ablation(
    ds: Dataset, seeds=(1, 2, 3), epochs: int | None = None, archetypes=("chair",)
) -> AblationResult:
    """Unary vs group size prediction, per-part L1 on held-out shapes."""
    eval_splits = ("val", "test")
    per_arm = {"unary": [], "group": []}
    curves = {}
    for variant in ("unary", "group"):
        train_task = build_size_task(ds, "train", archetypes, variant)
        eval_task = build_size_task(ds, eval_splits[0], archetypes, variant)
        eval_task.samples.extend(build_size_task(ds, eval_splits[1], archetypes, variant).samples)
        for seed in seeds:
            head = build_head("size", seed=seed)
            opt = optimizer_for("size", {"epochs": epochs})
            result = train_head("size", head, train_task, opt, seed=seed + 200)
            per_arm[variant].append(eval_size(head, eval_task))
            curves[f"{variant}-seed{seed}"] = result.loss_curve
    rows, keys = _rows_from(per_arm, seeds)
    return AblationResult("group-size", rows, keys, "size_l1", curves)


def relative_position_ablation(
    ds: Dataset, seeds=(1, 2, 3), epochs: int | None = None, archetypes=("chair",)
) -> AblationResult:
    """Absolute-center regression vs contact-point relative positions.

    Both arms are scored as L1 on tree-edge offset vectors; the absolute
    arm's offsets are differences of its regressed world centers, which
    inherit its sensitivity to the random global shape translations.
    """
    train_edges = build_edge_task(ds, "train", archetypes)
    eval_edges = _concat_edges(build_edge_task(ds, "val", archetypes), build_edge_task(ds, "test", archetypes))
    train_parts = build_absolute_task(ds, "train", archetypes)
    eval_parts = _concat_parts(build_absolute_task(ds, "val", archetypes), build_absolute_task(ds, "test", archetypes))
    per_arm = {"absolute": [], "relative": []}
    notes = {"absolute_center_l1": []}
    curves = {}
    for seed in seeds:
        abs_head = build_head("abs-position", seed=seed)
        opt = optimizer_for("abs-position", {"epochs": epochs})
        result = train_head("abs-position", abs_head, train_parts, opt, seed=seed + 300)
        per_arm["absolute"].append(eval_absolute_as_offsets(abs_head, eval_parts, eval_edges))
        notes["absolute_center_l1"].append(eval_absolute_centers(abs_head, eval_parts))
        curves[f"absolute-seed{seed}"] = result.loss_curve

        contact_head = build_head("contact", seed=seed)
        opt = optimizer_for("contact", {"epochs": epochs})
        result = train_head("contact", contact_head, train_edges, opt, seed=seed + 300)
        _, l1, _ = eval_contact_offsets(contact_head, eval_edges)
        per_arm["relative"].append(l1)
        curves[f"relative-seed{seed}"] = result.loss_curve
    rows, keys = _rows_from(per_arm, seeds)
    return AblationResult("relative-position", rows, keys, "offset_l1", curves, notes)


def contact_offset_ablation(
    ds: Dataset, seeds=(1, 2, 3), epochs: int | None = None, archetypes=("chair",)
) -> AblationResult:
    """Contact-point parameterization vs direct center-offset regression."""
    train_edges = build_edge_task(ds, "train", archetypes)
    eval_edges = _concat_edges(build_edge_task(ds, "val", archetypes), build_edge_task(ds, "test", archetypes))
    per_arm = {"center-offset": [], "contact-point": []}
    notes = {"min_bound_margin": []}
    curves = {}
    for seed in seeds:
        offset_head = build_head("offset", seed=seed)
        opt = optimizer_for("offset", {"epochs": epochs})
        result = train_head("offset", offset_head, train_edges, opt, seed=seed + 400)
        per_arm["center-offset"].append(eval_vector_offsets(offset_head, eval_edges))
        curves[f"center-offset-seed{seed}"] = result.loss_curve

        contact_head = build_head("contact", seed=seed)
        opt = optimizer_for("contact", {"epochs": epochs})
        result = train_head("contact", contact_head, train_edges, opt, seed=seed + 400)
        _, l1, margins = eval_contact_offsets(contact_head, eval_edges)
        per_arm["contact-point"].append(l1)
        notes["min_bound_margin"].append(float(margins.min()))
        curves[f"contact-point-seed{seed}"] = result.loss_curve
    rows, keys = _rows_from(per_arm, seeds)
    return AblationResult("contact-vs-offset", rows, keys, "offset_l1", curves, notes)


def joint_sequential_ablation(
    ds: Dataset, seeds=(1, 2, 3), epochs: int | None = None, archetypes=("chair",)
) -> AblationResult:
    """Joint box regression (Chamfer-supervised) vs sequential orientation+size."""
    train_joint = build_joint_task(ds, "train", archetypes)
    eval_joint_task = _concat_joint(build_joint_task(ds, "val", archetypes), build_joint_task(ds, "test", archetypes))
    train_orient = build_orientation_task(ds, "train", archetypes)
    train_size = build_size_task(ds, "train", archetypes, "unary")
    per_arm = {"joint": [], "sequential": []}
    curves = {}
    for seed in seeds:
        joint_head = build_head("joint", seed=seed)
        opt = optimizer_for("joint", {"epochs": epochs})
        result = train_head("joint", joint_head, train_joint, opt, seed=seed + 500)
        per_arm["joint"].append(eval_joint(joint_head, eval_joint_task))
        curves[f"joint-seed{seed}"] = result.loss_curve

        orient_head = build_head("orientation", seed=seed)
        opt = optimizer_for("orientation", {"epochs": epochs, "decay_every": 10})
        train_head("orientation", orient_head, train_orient, opt, seed=seed + 500, loss_kind="moe-minn")
        size_head = build_head("size", seed=seed)
        opt = optimizer_for("size", {"epochs": epochs})
        result = train_head("size", size_head, train_size, opt, seed=seed + 500)
        per_arm["sequential"].append(eval_sequential(orient_head, size_head, eval_joint_task))
        curves[f"sequential-seed{seed}"] = result.loss_curve
    rows, keys = _rows_from(per_arm, seeds)
    return AblationResult("joint-vs-sequential", rows, keys, "box_chamfer", curves)


def _concat_edges(a, b):
    from .pipeline import EdgeTask

    return EdgeTask(
        np.concatenate([a.feats_pc, b.feats_pc]),
        np.concatenate([a.feats_cp, b.feats_cp]),
        np.concatenate([a.verts_p, b.verts_p]),
        np.concatenate([a.verts_c, b.verts_c]),
        np.concatenate([a.target, b.target]),
        np.concatenate([a.bounds, b.bounds]),
        a.meta + b.meta,
    )


def _concat_parts(a, b):
    from .pipeline import PartVectorTask

    return PartVectorTask(
        np.concatenate([a.features, b.features]),
        np.concatenate([a.target, b.target]),
        a.meta + b.meta,
    )


def _concat_joint(a, b):
    from .pipeline import JointTask

    return JointTask(
        np.concatenate([a.features, b.features]),
        np.concatenate([a.gt_corners, b.gt_corners]),
        a.gt_boxes + b.gt_boxes,
        a.meta + b.meta,
    )


def run_ablation(name: str, ds: Dataset, seeds=(1, 2, 3), epochs: int | None = None, archetypes=("chair",), loss_cfg: LossConfig | None = None) -> AblationResult:
    if name == "rotation-loss":
        return rotation_loss_ablation(ds, seeds, epochs, loss_cfg, archetypes)
    if name == "group-size":
        return group_size_ablation(ds, seeds, epochs, archetypes)
    if name == "relative-position":
        return relative_position_ablation(ds, seeds, epochs, archetypes)
    if name == "contact-vs-offset":
        return contact_offset_ablation(ds, seeds, epochs, archetypes)
    if name == "joint-vs-sequential":
        return joint_sequential_ablation(ds, seeds, epochs, archetypes)
    raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")


# -- full pipeline evaluation ----------------------------------------------------


def run_full_eval(
    ds: Dataset,
    bundle: HeadBundle | None,
    split: str = "test",
    oracle: bool = False,
    adjacency_threshold: float = 0.7,
    symmetry_threshold: float = 0.9,
    eval_config: dict | None = None,
    archetypes=None,
) -> MetricReport:
    """Predict every (shape, view) sample of a split and score against GT.

    In oracle mode each stage is replaced by ground truth (one prediction
    per shape); otherwise `bundle` provides the trained heads.
    """
    preds, gts, cats, ids = [], [], [], []
    if oracle:
        for sid in ds.split_ids(split, archetypes):
            shape = ds.shapes[sid]
            preds.append(gt_oracle_shape(shape))
            gts.append(shape)
            cats.append(ds.archetype(sid))
            ids.append(sid)
    else:
        if bundle is None:
            raise ValueError("trained evaluation requires a head bundle")
        for sid, v in ds.samples(split, archetypes):
            shape, view = ds.shapes[sid], ds.views[(sid, v)]
            preds.append(
                predict_shape(bundle, shape, view, adjacency_threshold, symmetry_threshold)
            )
            gts.append(shape)
            cats.append(ds.archetype(sid))
            ids.append(sid)
    return evaluate_dataset(preds, gts, cats, eval_config, shape_ids=ids)
