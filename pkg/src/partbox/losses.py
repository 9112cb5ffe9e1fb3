"""Training losses and scalar metrics.

Every loss here accepts either plain numpy arrays (returning a float-like
numpy scalar) or DiffTensor nodes (returning a DiffTensor, so gradients
flow to head parameters).  The rotation losses quotient out the axis
relabeling ambiguity by taking minima over a RotationEquivalenceSet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import OrientedBox, RotationEquivalenceSet, box_vertices
from .nets.autodiff import DiffTensor, is_tensor
from .nets import autodiff as ad

_LOG_FLOOR = 1e-300  # keeps log(probability) finite for exact zeros


@dataclass
class MoEPrediction:
    """K expert rotations plus selection probabilities on the simplex."""

    rotations: list
    probabilities: object

    def __post_init__(self):
        probs = self.probabilities.value if is_tensor(self.probabilities) else np.asarray(self.probabilities)
        if probs.shape != (len(self.rotations),):
            raise ValueError("need one probability per expert")
        if np.any(probs < -1e-12) or abs(float(probs.sum()) - 1.0) > 1e-6:
            raise ValueError("probabilities must be nonnegative and sum to 1")

    @property
    def n_experts(self) -> int:
        return len(self.rotations)

    def best_expert(self) -> int:
        probs = self.probabilities.value if is_tensor(self.probabilities) else np.asarray(self.probabilities)
        return int(np.argmax(probs))

    def best_rotation(self) -> np.ndarray:
        r = self.rotations[self.best_expert()]
        return r.value if is_tensor(r) else np.asarray(r)


@dataclass
class LossConfig:
    """Weights of the mixture objective: total = minN + lam * NLL(mixture)."""

    lam: float = 1.0
    laplace_b: float = 0.5
    mode: str = "all48"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.laplace_b <= 0:
            raise ValueError("laplace_b must be > 0")

    def to_dict(self) -> dict:
        return {"lam": self.lam, "laplace_b": self.laplace_b, "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**d)


def _stack(values):
    if any(is_tensor(v) for v in values):
        return ad.stack([ad.as_tensor(v) for v in values])
    return np.asarray(values)


def _logsumexp_np(x: np.ndarray) -> float:
    m = np.max(x)
    if not np.isfinite(m):
        m = 0.0
    return float(m + np.log(np.sum(np.exp(x - m))))


def set_distance(rotation, eq_set: RotationEquivalenceSet):
    """Min-of-N squared distance of one rotation to the equivalence set.

    Same value as geometry.rotation_set_distance but usable on DiffTensor
    rotations; the subgradient routes through the nearest set element.
    """
    diff = (rotation - eq_set.elements) ** 2
    return diff.mean(axis=(1, 2)).min()


def min_of_n_loss(pred: MoEPrediction, gt_set: RotationEquivalenceSet):
    """Minimum over experts of the set distance (the paper-style L1 term)."""
    return _stack([set_distance(r, gt_set) for r in pred.rotations]).min()


def laplace_mixture_loglik(pred: MoEPrediction, gt_set: RotationEquivalenceSet, cfg: LossConfig):
    """Log-likelihood under the probability-weighted Laplace mixture.

    log sum_j q_j * (1/(2b)) * exp(-D_j / b), stabilized via log-sum-exp.
    """
    b = cfg.laplace_b
    dists = [set_distance(r, gt_set) for r in pred.rotations]
    probs = pred.probabilities
    if is_tensor(probs) or any(is_tensor(d) for d in dists):
        log_q = (ad.as_tensor(probs) + _LOG_FLOOR).log()
        terms = log_q - _stack(dists) * (1.0 / b)
        return ad.logsumexp(terms, axis=0) - math.log(2.0 * b)
    terms = np.log(np.asarray(probs) + _LOG_FLOOR) - np.asarray(dists) / b
    return _logsumexp_np(terms) - math.log(2.0 * b)


def moe_total_loss(pred: MoEPrediction, gt_set: RotationEquivalenceSet, cfg: LossConfig):
    """Min-of-N term plus lam times the mixture negative log-likelihood."""
    nll = -laplace_mixture_loglik(pred, gt_set, cfg)
    return min_of_n_loss(pred, gt_set) + cfg.lam * nll


def naive_rotation_mse(rotation, gt_rotation):
    """Elementwise rotation MSE against a single (possibly ambiguous) label."""
    return ((rotation - np.asarray(gt_rotation)) ** 2).mean()


def size_loss(pred_lengths, gt_lengths):
    """Mean squared error between per-axis edge lengths."""
    return ((pred_lengths - np.asarray(gt_lengths, dtype=np.float64)) ** 2).mean()


def position_loss(pred_offset, gt_offset):
    """Mean squared error on a relative-position (or center) vector."""
    return ((pred_offset - np.asarray(gt_offset, dtype=np.float64)) ** 2).mean()


def chamfer_box_distance(a: OrientedBox, b: OrientedBox) -> float:
    """Symmetric Chamfer distance between the two 8-vertex sets.

    Mean squared nearest-neighbor distance in each direction, summed.
    """
    va, vb = box_vertices(a), box_vertices(b)
    d2 = np.sum((va[:, None, :] - vb[None, :, :]) ** 2, axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def l1_vector_error(pred, gt) -> float:
    """Mean absolute componentwise difference."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return float(np.abs(pred - gt).mean())


# -- batched objectives (shapes lead with the sample axis) -------------------


def batched_set_distances(rotations, gt_sets: np.ndarray):
    """(B, K, 3, 3) rotations vs (B, M, 3, 3) sets -> (B, K) min distances."""
    B, K = rotations.shape[:2]
    M = gt_sets.shape[1]
    diff = rotations.reshape(B, K, 1, 3, 3) - gt_sets.reshape(B, 1, M, 3, 3)
    return (diff**2).mean(axis=(3, 4)).min(axis=2)


def batched_moe_loss(rotations, probabilities, gt_sets: np.ndarray, cfg: LossConfig):
    """Mean over the batch of moe_total_loss, computed in one graph.

    rotations: DiffTensor (B, K, 3, 3); probabilities: DiffTensor (B, K);
    gt_sets: ndarray (B, M, 3, 3).
    """
    dists = batched_set_distances(rotations, gt_sets)
    l1 = dists.min(axis=1)
    log_q = (probabilities + _LOG_FLOOR).log()
    loglik = ad.logsumexp(log_q - dists * (1.0 / cfg.laplace_b), axis=1) - math.log(
        2.0 * cfg.laplace_b
    )
    return (l1 + cfg.lam * (0.0 - loglik)).mean()


def batched_min_of_n_loss(rotations, gt_sets: np.ndarray):
    """Mean over the batch of the min-over-experts set distance."""
    return batched_set_distances(rotations, gt_sets).min(axis=1).mean()


def batched_rotation_mse(rotations, gt_rotations: np.ndarray):
    """Mean naive MSE for single-expert (B, 1, 3, 3) rotations vs (B, 3, 3) labels."""
    B = gt_rotations.shape[0]
    diff = rotations.reshape(B, 3, 3) - gt_rotations
    return (diff**2).mean()
