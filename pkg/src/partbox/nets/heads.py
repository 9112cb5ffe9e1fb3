"""Prediction heads built on the autodiff stack.

All heads consume fixed-length view-feature vectors.  Batched entry
points (suffix ``_batch``) lead with the sample axis and are what the
trainer uses; the single-sample wrappers mirror the one-part /
one-group / one-pair call signatures used at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DiffTensor, as_tensor, concatenate, softmax, stack
from .layers import MlpParams, mlp_forward

QUAT_NORM_EPS = 1e-8


def normalize_quaternions(q: DiffTensor) -> DiffTensor:
    """Normalize quaternions along the last axis, shape (..., 4).

    Rows with norm below QUAT_NORM_EPS fall back to the identity
    quaternion with zero gradient, so freshly zero-initialized heads do
    not produce NaNs.
    """
    q = as_tensor(q)
    v = q.value
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    ok = norms >= QUAT_NORM_EPS
    safe = np.where(ok, norms, 1.0)
    unit = v / safe
    fallback = np.zeros_like(v)
    fallback[..., 0] = 1.0
    out_value = np.where(ok, unit, fallback)
    out = DiffTensor(out_value, (q,))

    def back(g):
        dot = np.sum(out_value * g, axis=-1, keepdims=True)
        gi = np.where(ok, (g - out_value * dot) / safe, 0.0)
        q._accumulate(gi)

    out._backward = back
    return out


def quats_to_matrices(q: DiffTensor) -> DiffTensor:
    """Unit quaternions (..., 4) to rotation matrices (..., 3, 3).

    Same formula as geometry.quat_to_matrix, expressed in autodiff ops.
    """
    q = as_tensor(q)
    w, x, y, z = (q[..., i] for i in range(4))
    entries = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    flat = stack(entries, axis=-1)
    return flat.reshape(flat.shape[:-1] + (3, 3))


@dataclass
class OrientationHead:
    """Shared trunk with K expert branches, each emitting a quaternion + logit."""

    trunk: MlpParams
    experts: list

    @classmethod
    def init(cls, feature_dim: int, hidden=(128, 128), expert_hidden=(64,), n_experts: int = 4, seed: int = 0):
        trunk = MlpParams.init([feature_dim, *hidden], seed=seed)
        experts = [
            MlpParams.init([hidden[-1], *expert_hidden, 5], seed=seed + 1 + k)
            for k in range(n_experts)
        ]
        return cls(trunk, experts)

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def parameters(self) -> list:
        out = self.trunk.parameters()
        for e in self.experts:
            out.extend(e.parameters())
        return out

    def named_parameters(self) -> dict:
        out = _named(self.trunk, "trunk")
        for k, e in enumerate(self.experts):
            out.update(_named(e, f"expert{k}"))
        return out


def orientation_forward_batch(head: OrientationHead, feats):
    """Features (B, F) -> (rotations (B, K, 3, 3), probabilities (B, K), quats)."""
    h = mlp_forward(head.trunk, feats, activate_last=True)
    outs = stack([mlp_forward(e, h) for e in head.experts], axis=1)  # (B, K, 5)
    quats = normalize_quaternions(outs[..., :4])
    rotations = quats_to_matrices(quats)
    probs = softmax(outs[..., 4], axis=-1)
    return rotations, probs, quats


def forward_orientation(head: OrientationHead, feat):
    """Single-feature forward returning a losses.MoEPrediction."""
    from ..losses import MoEPrediction

    feats = np.asarray(feat, dtype=np.float64).reshape(1, -1)
    rotations, probs, _ = orientation_forward_batch(head, feats)
    return MoEPrediction(
        rotations=[rotations[0, k] for k in range(head.n_experts)],
        probabilities=probs[0],
    )


@dataclass
class SizeHead:
    """Group-pooled, axis-permutation-equivariant edge-length regressor.

    Member features are encoded by a shared MLP and max-pooled into one
    group feature; each axis is then treated as a 'point': the group
    feature is paired with the axis vector, a shared per-axis MLP plus a
    max-pooled global feature produce one positive length per axis.
    """

    encoder: MlpParams
    axis_mlp: MlpParams
    out_mlp: MlpParams

    @classmethod
    def init(cls, feature_dim: int, hidden=(96,), axis_hidden=(64, 64), axis_dim: int = 3, seed: int = 0):
        """`axis_dim` is the per-axis query width: the unit vector itself
        plus any extra per-axis scalars the caller pairs with it."""
        encoder = MlpParams.init([feature_dim, *hidden], seed=seed)
        axis_mlp = MlpParams.init([hidden[-1] + axis_dim, *axis_hidden], seed=seed + 1)
        out_mlp = MlpParams.init([2 * axis_hidden[-1], 32, 1], seed=seed + 2)
        return cls(encoder, axis_mlp, out_mlp)

    def parameters(self) -> list:
        return self.encoder.parameters() + self.axis_mlp.parameters() + self.out_mlp.parameters()

    def named_parameters(self) -> dict:
        out = _named(self.encoder, "encoder")
        out.update(_named(self.axis_mlp, "axis_mlp"))
        out.update(_named(self.out_mlp, "out_mlp"))
        return out


def forward_size(head: SizeHead, group_feats, axes):
    """Member features (M, F) + axis rows (3, 3) -> positive lengths (3,).

    Exactly permutation-equivariant in the axis list and invariant to
    member order (elementwise max pooling).
    """
    feats = as_tensor(group_feats)
    if feats.ndim == 1:
        feats = feats.reshape(1, -1)
    enc = mlp_forward(head.encoder, feats, activate_last=True)
    group = enc.max(axis=0)
    g3 = stack([group, group, group], axis=0)
    x = concatenate([g3, as_tensor(np.asarray(axes, dtype=np.float64))], axis=1)
    loc = mlp_forward(head.axis_mlp, x, activate_last=True)
    glob = loc.max(axis=0)
    y = concatenate([loc, stack([glob, glob, glob], axis=0)], axis=1)
    return mlp_forward(head.out_mlp, y).reshape(3).softplus()


@dataclass
class ContactHead:
    """Per-vertex softmax weights over a box's 8 corners.

    The pair feature is encoded once, paired with every vertex position,
    and a shared per-vertex MLP (with a max-pooled global feature) emits
    one logit per vertex; softmax turns those into convex weights.  The
    fixed logit scale lets the softmax saturate onto faces and corners
    without driving raw activations to extremes.
    """

    encoder: MlpParams
    vertex_mlp: MlpParams
    logit_mlp: MlpParams
    logit_scale: float = 4.0

    @classmethod
    def init(cls, feature_dim: int, hidden=(96,), vertex_hidden=(64, 64), seed: int = 0, logit_scale: float = 4.0):
        encoder = MlpParams.init([feature_dim, *hidden], seed=seed)
        vertex_mlp = MlpParams.init([hidden[-1] + 3, *vertex_hidden], seed=seed + 1)
        logit_mlp = MlpParams.init([2 * vertex_hidden[-1], 32, 1], seed=seed + 2)
        return cls(encoder, vertex_mlp, logit_mlp, logit_scale)

    def parameters(self) -> list:
        return self.encoder.parameters() + self.vertex_mlp.parameters() + self.logit_mlp.parameters()

    def named_parameters(self) -> dict:
        out = _named(self.encoder, "encoder")
        out.update(_named(self.vertex_mlp, "vertex_mlp"))
        out.update(_named(self.logit_mlp, "logit_mlp"))
        return out


def contact_forward_batch(head: ContactHead, pair_feats, vertices):
    """Pair feats (B, F) + vertices (B, 8, 3) -> (weights (B, 8), contacts (B, 3))."""
    feats = as_tensor(pair_feats)
    verts = as_tensor(vertices)
    B = verts.shape[0]
    f = mlp_forward(head.encoder, feats, activate_last=True)
    f8 = stack([f] * 8, axis=1)  # (B, 8, H)
    x = concatenate([f8, verts], axis=2)
    loc = mlp_forward(head.vertex_mlp, x, activate_last=True)
    glob = loc.max(axis=1)
    y = concatenate([loc, stack([glob] * 8, axis=1)], axis=2)
    logits = mlp_forward(head.logit_mlp, y).reshape(B, 8) * head.logit_scale
    weights = softmax(logits, axis=-1)
    contact = (weights.reshape(B, 8, 1) * verts).sum(axis=1)
    return weights, contact


def forward_contact(head: ContactHead, pair_feat, vertices):
    """Single pair: feature (F,) + vertices (8, 3) -> (weights (8,), contact (3,))."""
    feats = np.asarray(pair_feat, dtype=np.float64).reshape(1, -1)
    verts = np.asarray(vertices, dtype=np.float64).reshape(1, 8, 3)
    w, c = contact_forward_batch(head, feats, verts)
    return w.reshape(8), c.reshape(3)


@dataclass
class RelationHead:
    """Binary pair-relationship classifier; sigmoid score in [0, 1]."""

    mlp: MlpParams

    @classmethod
    def init(cls, feature_dim: int, hidden=(64, 64), seed: int = 0):
        return cls(MlpParams.init([feature_dim, *hidden, 1], seed=seed))

    def parameters(self) -> list:
        return self.mlp.parameters()

    def named_parameters(self) -> dict:
        return _named(self.mlp, "mlp")


def relation_logits_batch(head: RelationHead, feats):
    feats = as_tensor(feats)
    return mlp_forward(head.mlp, feats).reshape(feats.shape[0])


def relation_score(head: RelationHead, feat) -> float:
    feats = np.asarray(feat, dtype=np.float64).reshape(1, -1)
    return float(relation_logits_batch(head, feats).sigmoid().value[0])


def bce_with_logits(logits: DiffTensor, labels):
    """Numerically stable binary cross-entropy: mean over the batch."""
    y = np.asarray(labels, dtype=np.float64)
    return (y * (-logits).softplus() + (1.0 - y) * logits.softplus()).mean()


@dataclass
class VectorHead:
    """Plain MLP regressor to a 3-vector (absolute centers, offset baseline)."""

    mlp: MlpParams

    @classmethod
    def init(cls, feature_dim: int, hidden=(96, 96), seed: int = 0):
        return cls(MlpParams.init([feature_dim, *hidden, 3], seed=seed))

    def parameters(self) -> list:
        return self.mlp.parameters()

    def named_parameters(self) -> dict:
        return _named(self.mlp, "mlp")


def vector_forward_batch(head: VectorHead, feats):
    return mlp_forward(head.mlp, as_tensor(feats))


def _named(params: MlpParams, prefix: str) -> dict:
    out = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out
