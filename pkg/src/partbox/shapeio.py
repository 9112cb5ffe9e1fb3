"""Shape serialization: the JSON shape format and OBJ export.

The JSON schema (format_version 1) is the on-disk contract shared by the
synthetic dataset, the CLI export path, and any external producer:

    {
      "format_version": 1,
      "archetype": "chair",
      "tags": ["seat", "leg", ...],
      "parts": [{"center": [x,y,z], "size": [sx,sy,sz],
                 "quaternion": [w,x,y,z]}, ...],
      "groups": [[0], [1,2,3,4], ...],
      "edges": [[i,j], ...],
      "contacts": [{"edge": [i,j], "point": [x,y,z]}, ...]
    }

Serialization is canonical (sorted keys, no whitespace, repr floats), so
identical shapes produce identical bytes.
"""

from __future__ import annotations

import json

import numpy as np

from .geometry import OrientedBox

FORMAT_VERSION = 1

# canonical corner order (geometry.CORNER_SIGNS) triangulated with
# outward-facing windings
_BOX_TRIANGLES = (
    (0, 1, 3), (0, 3, 2),  # -x
    (4, 6, 7), (4, 7, 5),  # +x
    (0, 4, 5), (0, 5, 1),  # -y
    (2, 3, 7), (2, 7, 6),  # +y
    (0, 2, 6), (0, 6, 4),  # -z
    (1, 5, 7), (1, 7, 3),  # +z
)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def shape_to_dict(shape) -> dict:
    """PartShape (or anything with the same attributes) -> JSON-ready dict."""
    return {
        "format_version": FORMAT_VERSION,
        "archetype": shape.archetype,
        "tags": list(shape.tags),
        "parts": [
            {
                "center": b.center.tolist(),
                "size": b.size.tolist(),
                "quaternion": b.quaternion.tolist(),
            }
            for b in shape.parts
        ],
        "groups": [list(g) for g in shape.groups],
        "edges": [list(e) for e in shape.edges],
        "contacts": [
            {"edge": list(e), "point": p.tolist()} for e, p in sorted(shape.contacts.items())
        ],
    }


def shape_from_dict(d: dict):
    from .synth.shapes import PartShape

    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported shape format_version {version!r}")
    parts = [
        OrientedBox(p["center"], p["size"], p["quaternion"]) for p in d["parts"]
    ]
    contacts = {tuple(c["edge"]): np.asarray(c["point"], dtype=np.float64) for c in d["contacts"]}
    return PartShape(
        parts=parts,
        tags=list(d.get("tags", [""] * len(parts))),
        groups=tuple(tuple(g) for g in d["groups"]),
        edges=tuple(tuple(e) for e in d["edges"]),
        contacts=contacts,
        archetype=d.get("archetype", "unknown"),
    )


def write_shape_json(path, shape):
    with open(path, "w") as fh:
        fh.write(canonical_json(shape_to_dict(shape)))
        fh.write("\n")


def read_shape_json(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ValueError(f"{path}: malformed shape JSON at line {err.lineno}, column {err.colno}: {err.msg}") from err
    _require_fields(data, path)
    return shape_from_dict(data)


def _require_fields(data: dict, path):
    for key in ("format_version", "parts", "groups", "edges", "contacts"):
        if key not in data:
            raise ValueError(f"{path}: shape JSON missing required field {key!r}")
    for idx, part in enumerate(data["parts"]):
        for key in ("center", "size", "quaternion"):
            if key not in part:
                raise ValueError(f"{path}: part {idx} missing field {key!r}")


def boxes_to_obj_lines(boxes, names=None) -> list:
    """One named group per box, 8 vertices / 12 triangles each."""
    lines = []
    offset = 0
    for bi, box in enumerate(boxes):
        name = names[bi] if names else f"part_{bi}"
        lines.append(f"g {name}")
        for v in box.vertices():
            lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
        for tri in _BOX_TRIANGLES:
            a, b, c = (offset + t + 1 for t in tri)
            lines.append(f"f {a} {b} {c}")
        offset += 8
    return lines


def write_obj(path, boxes, names=None):
    with open(path, "w") as fh:
        fh.write("\n".join(boxes_to_obj_lines(boxes, names)))
        fh.write("\n")
