"""Minimal differentiable head stack: autodiff, layers, heads, trainer."""

from .autodiff import DiffTensor, as_tensor, concatenate, logsumexp, softmax, stack
from .layers import MlpParams, mlp_forward
from .heads import (
    ContactHead,
    OrientationHead,
    RelationHead,
    SizeHead,
    VectorHead,
    forward_contact,
    forward_orientation,
    forward_size,
)
from .training import OptimizerConfig, TrainingDiverged, grad_check, train
from .checkpoint import load_checkpoint, save_checkpoint
