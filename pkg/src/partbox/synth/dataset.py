"""Dataset generation and loading: shapes, views, manifest, splits.

Layout on disk (all JSON, canonical serialization, byte-reproducible per
seed):

    <root>/manifest.json
    <root>/shapes/shape_<id>.json          geometry + GT relationships
    <root>/views/shape_<id>_view_<v>.json  camera + features + flags

Splits are by shape, never by view, stratified per archetype.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..shapeio import canonical_json, read_shape_json, shape_from_dict, shape_to_dict
from .features import (
    CameraPose,
    NoiseConfig,
    ViewFeatureSet,
    extract_view_features,
    sample_camera,
)
from .shapes import ARCHETYPES, PartShape, generate_shape, randomize_gt_rotation_labels

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class DatasetConfig:
    n_shapes: int = 100
    archetypes: tuple = ("chair",)
    views_per_shape: int = 4
    seed: int = 0
    translation_scale: float = 1.5
    relabel: bool = True
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    split_fractions: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.n_shapes < 1:
            raise ValueError("n_shapes must be >= 1")
        if self.views_per_shape < 1:
            raise ValueError("views_per_shape must be >= 1")
        for a in self.archetypes:
            if a not in ARCHETYPES:
                raise ValueError(f"unknown archetype {a!r}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    def to_dict(self) -> dict:
        return {
            "n_shapes": self.n_shapes,
            "archetypes": list(self.archetypes),
            "views_per_shape": self.views_per_shape,
            "seed": self.seed,
            "translation_scale": self.translation_scale,
            "relabel": self.relabel,
            "noise": self.noise.to_dict(),
            "split_fractions": list(self.split_fractions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        d["archetypes"] = tuple(d.get("archetypes", ("chair",)))
        d["split_fractions"] = tuple(d.get("split_fractions", (0.8, 0.1, 0.1)))
        d["noise"] = NoiseConfig.from_dict(d.get("noise", {}))
        return cls(**d)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def shape_bounding(shape: PartShape):
    center = np.mean([b.center for b in shape.parts], axis=0)
    radius = max(
        float(np.linalg.norm(b.center - center)) + b.circumradius for b in shape.parts
    )
    return center, radius


def _split_by_shape(ids_by_arch: dict, fractions, seed: int) -> dict:
    splits = {name: [] for name in SPLITS}
    for arch in sorted(ids_by_arch):
        ids = ids_by_arch[arch]
        rng = np.random.default_rng([seed, 777, _arch_code(arch)])
        perm = [ids[k] for k in rng.permutation(len(ids))]
        n = len(perm)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        n_train = min(n_train, n)
        n_val = min(n_val, n - n_train)
        splits["train"].extend(perm[:n_train])
        splits["val"].extend(perm[n_train : n_train + n_val])
        splits["test"].extend(perm[n_train + n_val :])
    return {k: sorted(v) for k, v in splits.items()}


def _arch_code(arch: str) -> int:
    return ARCHETYPES.index(arch)


def view_to_dict(fs: ViewFeatureSet, shape_id: int, view_id: int) -> dict:
    return {
        "format_version": MANIFEST_VERSION,
        "shape_id": shape_id,
        "view_id": view_id,
        "camera": fs.camera.to_dict(),
        "part_features": fs.part_features.tolist(),
        "pair_features": fs.pair_features.tolist(),
        "occluded": [bool(x) for x in fs.occluded],
        "visibility": fs.visibility.tolist(),
    }


def view_from_dict(d: dict) -> ViewFeatureSet:
    return ViewFeatureSet(
        camera=CameraPose.from_dict(d["camera"]),
        part_features=np.asarray(d["part_features"], dtype=np.float64),
        pair_features=np.asarray(d["pair_features"], dtype=np.float64),
        occluded=np.asarray(d["occluded"], dtype=bool),
        visibility=np.asarray(d["visibility"], dtype=np.float64),
    )


def make_dataset(root, config: DatasetConfig) -> dict:
    """Generate and write a dataset; returns the manifest dict.

    Per-shape seeds derive from (config.seed, shape index), so two runs
    with the same config produce byte-identical files.
    """
    root = str(root)
    os.makedirs(os.path.join(root, "shapes"), exist_ok=True)
    os.makedirs(os.path.join(root, "views"), exist_ok=True)
    ids_by_arch: dict = {}
    entries = []
    for i in range(config.n_shapes):
        arch = config.archetypes[i % len(config.archetypes)]
        shape = generate_shape(arch, [config.seed, i], config.translation_scale)
        if config.relabel:
            shape = randomize_gt_rotation_labels(shape, [config.seed, i, 1])
        center, radius = shape_bounding(shape)
        cam_rng = np.random.default_rng([config.seed, i, 2])
        shape_file = f"shapes/shape_{i:05d}.json"
        with open(os.path.join(root, shape_file), "w") as fh:
            fh.write(canonical_json(shape_to_dict(shape)))
            fh.write("\n")
        view_files = []
        for v in range(config.views_per_shape):
            camera = sample_camera(center, radius, cam_rng)
            fs = extract_view_features(shape, camera, config.noise, seed=[config.seed, i, 100 + v])
            view_file = f"views/shape_{i:05d}_view_{v:02d}.json"
            with open(os.path.join(root, view_file), "w") as fh:
                fh.write(canonical_json(view_to_dict(fs, i, v)))
                fh.write("\n")
            view_files.append(view_file)
        ids_by_arch.setdefault(arch, []).append(i)
        entries.append(
            {"id": i, "archetype": arch, "shape_file": shape_file, "view_files": view_files}
        )
    splits = _split_by_shape(ids_by_arch, config.split_fractions, config.seed)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "config": config.to_dict(),
        "config_hash": config_hash(config.to_dict()),
        "n_shapes": config.n_shapes,
        "views_per_shape": config.views_per_shape,
        "n_samples": config.n_shapes * config.views_per_shape,
        "splits": splits,
        "shapes": entries,
    }
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        fh.write(canonical_json(manifest))
        fh.write("\n")
    return manifest


@dataclass
class Dataset:
    """Loaded dataset: manifest plus eagerly parsed shapes and views."""

    root: str
    manifest: dict
    shapes: dict
    views: dict

    @classmethod
    def load(cls, root) -> "Dataset":
        root = str(root)
        manifest_path = os.path.join(root, "manifest.json")
        if not os.path.exists(manifest_path):
            raise FileNotFoundError(f"no manifest.json under {root!r}; run `partbox gen` first")
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        if manifest.get("format_version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {manifest.get('format_version')!r}")
        shapes, views = {}, {}
        for entry in manifest["shapes"]:
            sid = entry["id"]
            shapes[sid] = read_shape_json(os.path.join(root, entry["shape_file"]))
            for v, vf in enumerate(entry["view_files"]):
                with open(os.path.join(root, vf)) as fh:
                    views[(sid, v)] = view_from_dict(json.load(fh))
        return cls(root, manifest, shapes, views)

    @property
    def config(self) -> DatasetConfig:
        return DatasetConfig.from_dict(self.manifest["config"])

    def archetype(self, shape_id: int) -> str:
        return self.manifest["shapes"][shape_id]["archetype"]

    def split_ids(self, split: str, archetypes=None) -> list:
        ids = self.manifest["splits"][split]
        if archetypes is None:
            return list(ids)
        allowed = set(archetypes)
        return [i for i in ids if self.archetype(i) in allowed]

    def samples(self, split: str, archetypes=None) -> list:
        """(shape_id, view_id) pairs for a split, optionally filtered."""
        out = []
        for sid in self.split_ids(split, archetypes):
            for v in range(self.manifest["views_per_shape"]):
                out.append((sid, v))
        return out
