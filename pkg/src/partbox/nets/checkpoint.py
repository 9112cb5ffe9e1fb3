"""Parameter checkpoints: versioned JSON with shape headers and fp64 payloads.

Schema (format_version 1):

    {
      "format_version": 1,
      "head_type": "orientation",
      "meta": {...arbitrary JSON (arch dims, config hash, epoch, ...)},
      "arrays": {"trunk.w0": {"shape": [44, 96], "dtype": "float64",
                              "data": "<base64 little-endian bytes>"}, ...}
    }

Arrays round-trip bit-exactly.
"""

from __future__ import annotations

import base64
import json

import numpy as np

CHECKPOINT_VERSION = 1


def save_checkpoint(path, head_type: str, arrays: dict, meta: dict | None = None):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "head_type": head_type,
        "meta": meta or {},
        "arrays": {
            name: {
                "shape": list(np.asarray(a).shape),
                "dtype": "float64",
                "data": base64.b64encode(
                    np.ascontiguousarray(a, dtype="<f8").tobytes()
                ).decode("ascii"),
            }
            for name, a in arrays.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format_version {version!r}")
    arrays = {}
    for name, spec in payload["arrays"].items():
        raw = base64.b64decode(spec["data"])
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(spec["shape"])
    return payload["head_type"], arrays, payload.get("meta", {})


def assign_named_parameters(named_params: dict, arrays: dict):
    """Load checkpoint arrays into live DiffTensor parameters, by name."""
    missing = set(named_params) - set(arrays)
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    for name, tensor in named_params.items():
        value = arrays[name]
        if tuple(value.shape) != tensor.shape:
            raise ValueError(
                f"parameter {name}: checkpoint shape {value.shape} != model shape {tensor.shape}"
            )
        tensor.value[...] = value
