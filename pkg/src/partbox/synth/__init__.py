"""Synthetic data: procedural shapes, view features, dataset packaging."""

from .shapes import ARCHETYPES, PartShape, audit_shape, generate_shape, randomize_gt_rotation_labels
from .features import CameraPose, NoiseConfig, ViewFeatureSet, extract_view_features, sample_camera
from .dataset import Dataset, DatasetConfig, make_dataset
