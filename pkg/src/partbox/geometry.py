"""Core rotation and oriented-box math.

Conventions used throughout the package:

* Quaternions are ``(w, x, y, z)`` with unit norm; ``q`` and ``-q`` encode
  the same rotation.
* Rotation matrices are 3x3 with orthonormal columns and det +1; the
  columns are the box principal axes.
* An oriented box is (center, edge lengths, rotation).  Its 8 vertices are
  enumerated in a fixed canonical order: sign patterns (-,-,-), (-,-,+),
  (-,+,-), ... (+,+,+), i.e. lexicographic with ``-`` before ``+``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Invalid geometric input (non-orthonormal matrix, too few points, ...)."""


class NormalizationError(GeometryError):
    """Quaternion with near-zero norm cannot be normalized."""


SIZE_EPS = 1e-6

# Canonical corner sign patterns, shape (8, 3): (-,-,-), (-,-,+), ..., (+,+,+).
CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))

_ORTHO_TOL = 1e-6


def _check_rotation(R: np.ndarray, allow_improper: bool = False) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise GeometryError(f"rotation matrix must be 3x3, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise GeometryError("rotation matrix has non-finite entries")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > _ORTHO_TOL:
        raise GeometryError(f"matrix is not orthonormal (max |R^T R - I| = {err:.3g})")
    if not allow_improper and np.linalg.det(R) < 0.0:
        raise GeometryError("matrix has determinant -1; not a proper rotation")
    return R


def quat_to_matrix(q) -> np.ndarray:
    """Convert a quaternion (w, x, y, z) to a rotation matrix.

    The input is normalized first; a near-zero norm raises
    NormalizationError.
    """
    q = np.asarray(q, dtype=np.float64).reshape(4)
    if not np.all(np.isfinite(q)):
        raise NormalizationError("quaternion has non-finite components")
    n = math.sqrt(float(q @ q))
    if n < 1e-8:
        raise NormalizationError(f"quaternion norm {n:.3g} too small to normalize")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Convert a rotation matrix to a unit quaternion (w, x, y, z).

    Uses Shepperd-style branch selection on the largest of
    (trace, R00, R11, R22) so 180-degree rotations are stable.  The result
    is defined up to global sign.
    """
    R = _check_rotation(R)
    t = np.trace(R)
    if t > max(R[0, 0], R[1, 1], R[2, 2]):
        r = math.sqrt(1.0 + t)
        s = 0.5 / r
        q = np.array(
            [0.5 * r, (R[2, 1] - R[1, 2]) * s, (R[0, 2] - R[2, 0]) * s, (R[1, 0] - R[0, 1]) * s]
        )
    else:
        i = int(np.argmax([R[0, 0], R[1, 1], R[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = math.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        s = 0.5 / r
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) * s
        q[1 + i] = 0.5 * r
        q[1 + j] = (R[j, i] + R[i, j]) * s
        q[1 + k] = (R[k, i] + R[i, k]) * s
    return q / np.linalg.norm(q)


def axis_angle_matrix(axis, radians: float) -> np.ndarray:
    """Rotation matrix for a rotation of `radians` about `axis` (Rodrigues)."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n < 1e-12:
        raise GeometryError("rotation axis must be non-zero")
    x, y, z = a / n
    c, s = math.cos(radians), math.sin(radians)
    C = 1.0 - c
    return np.array(
        [
            [x * x * C + c, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, y * y * C + c, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, z * z * C + c],
        ]
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (via normalized random quaternion)."""
    q = rng.normal(size=4)
    while np.linalg.norm(q) < 1e-6:
        q = rng.normal(size=4)
    return quat_to_matrix(q / np.linalg.norm(q))


@dataclass(frozen=True)
class OrientedBox:
    """Oriented bounding box: center, per-axis edge lengths, rotation.

    Edge lengths are the full extents (not half-extents).  Degenerate
    lengths are clamped to SIZE_EPS so the box is always 3-dimensional.
    """

    center: np.ndarray
    size: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        s = np.asarray(self.size, dtype=np.float64).reshape(3)
        q = np.asarray(self.quaternion, dtype=np.float64).reshape(4)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(s)) and np.all(np.isfinite(q))):
            raise GeometryError("box fields must be finite")
        s = np.maximum(s, SIZE_EPS)
        n = np.linalg.norm(q)
        if n < 1e-8:
            raise NormalizationError("box quaternion has near-zero norm")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "quaternion", q / n)
        if not hasattr(self, "_rotation"):
            object.__setattr__(self, "_rotation", None)

    @classmethod
    def from_rotation(cls, center, size, R) -> "OrientedBox":
        """Construct with an exact rotation matrix (bypasses quat round-trip).

        The stored quaternion is derived for serialization, but `rotation`
        returns `R` verbatim, which keeps signed-permutation relabelings
        bit-exact.
        """
        R = _check_rotation(R)
        box = cls(center, size, matrix_to_quat(R))
        object.__setattr__(box, "_rotation", R.copy())
        return box

    @property
    def rotation(self) -> np.ndarray:
        cached = getattr(self, "_rotation", None)
        if cached is not None:
            return cached
        R = quat_to_matrix(self.quaternion)
        object.__setattr__(self, "_rotation", R)
        return R

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    @property
    def circumradius(self) -> float:
        return 0.5 * float(np.linalg.norm(self.size))

    def vertices(self) -> np.ndarray:
        return box_vertices(self)

    def local_vertices(self) -> np.ndarray:
        """Vertices in the part-centered, world-aligned frame (center at 0)."""
        half = 0.5 * self.size
        return (CORNER_SIGNS * half) @ self.rotation.T

    def translated(self, offset) -> "OrientedBox":
        return OrientedBox(self.center + np.asarray(offset, dtype=np.float64), self.size, self.quaternion)

    def contains(self, points, tol: float = 1e-9) -> bool:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        local = (p - self.center) @ self.rotation
        return bool(np.all(np.abs(local) <= 0.5 * self.size + tol))


def box_vertices(box: OrientedBox) -> np.ndarray:
    """The 8 world-space corners of a box, in canonical sign order."""
    return box.center + box.local_vertices()


def pca_obb_fit(points) -> OrientedBox:
    """Fit an oriented box to a point cloud via principal component analysis.

    Axes are the covariance eigenvectors sorted by descending eigenvalue
    (ties broken by descending lexicographic order of the sign-canonical
    eigenvectors); sizes are the point extents along each axis; the center
    is the extent midpoint, so the box contains every input point.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"expected (n, 3) point array, got {pts.shape}")
    if pts.shape[0] < 2:
        raise GeometryError(f"need at least 2 points to fit a box, got {pts.shape[0]}")
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)

    # Sign convention: largest-magnitude component positive.
    cols = []
    for k in range(3):
        v = evecs[:, k]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        cols.append(v)
    order = sorted(range(3), key=lambda k: (-evals[k], tuple(-cols[k])))
    axes = np.column_stack([cols[k] for k in order])
    if np.linalg.det(axes) < 0:
        axes[:, 2] = -axes[:, 2]

    proj = centered @ axes
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    size = np.maximum(hi - lo, SIZE_EPS)
    center = mean + axes @ ((lo + hi) / 2.0)
    return OrientedBox(center, size, matrix_to_quat(axes))


def sample_box_surface(box: OrientedBox, n: int, seed: int = 0) -> np.ndarray:
    """Sample `n` points uniformly on the box surface, area-weighted per face.

    Deterministic for a given (box, n, seed).
    """
    if n < 1:
        raise GeometryError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    sx, sy, sz = box.size
    # Face k is the pair of faces orthogonal to axis k; both share one area.
    face_areas = np.array([sy * sz, sx * sz, sx * sy], dtype=np.float64)
    probs = np.repeat(face_areas, 2)
    probs = probs / probs.sum()
    faces = rng.choice(6, size=n, p=probs)
    u = rng.uniform(-0.5, 0.5, size=(n, 2))
    local = np.empty((n, 3))
    half = 0.5 * box.size
    for f in range(6):
        mask = faces == f
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        others = [a for a in range(3) if a != axis]
        local[mask, axis] = sign * half[axis]
        local[mask, others[0]] = u[mask, 0] * box.size[others[0]]
        local[mask, others[1]] = u[mask, 1] * box.size[others[1]]
    return box.center + local @ box.rotation.T


def _signed_permutations(proper_only: bool) -> np.ndarray:
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for col, (row, s) in enumerate(zip(perm, signs)):
                m[row, col] = s
            if proper_only and np.linalg.det(m) < 0:
                continue
            mats.append(m)
    return np.array(mats)


SIGNED_PERMUTATIONS = _signed_permutations(proper_only=False)  # 48 elements
PROPER_SIGNED_PERMUTATIONS = _signed_permutations(proper_only=True)  # 24 rotations


@dataclass(frozen=True)
class RotationEquivalenceSet:
    """All rotations equivalent to a base rotation under axis relabeling.

    ``all48`` mode keeps every signed permutation of the axes (the axis set
    without order or signs); ``proper24`` keeps only the det +1 subset.
    """

    elements: np.ndarray
    mode: str = field(default="all48")

    def __len__(self) -> int:
        return self.elements.shape[0]

    def contains(self, R: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.min(np.abs(self.elements - R).reshape(len(self), -1).max(axis=1)) <= tol)


def equivalence_set(R, mode: str = "all48") -> RotationEquivalenceSet:
    """Orbit of `R` under right-multiplication by signed permutations.

    `proper24` keeps the det +1 half of the 48-element orbit, so both modes
    are invariant to which orbit representative `R` is (even an improper
    one).
    """
    R = _check_rotation(R, allow_improper=True)
    if mode not in ("all48", "proper24"):
        raise GeometryError(f"unknown equivalence mode {mode!r}")
    elements = np.einsum("ij,njk->nik", R, SIGNED_PERMUTATIONS)
    if mode == "proper24":
        elements = elements[np.linalg.det(elements) > 0.0]
    # Generic R gives all-distinct elements; dedup guards symmetric inputs.
    seen = {}
    for m in elements:
        seen.setdefault(m.tobytes(), m)
    return RotationEquivalenceSet(np.array(list(seen.values())), mode)


def canonical_frame(box: OrientedBox) -> tuple:
    """Label-independent axis frame and matching sizes for a box.

    Among the 48 signed-permutation relabelings of the box axes, picks
    the one whose flattened matrix is lexicographically largest.  Signed
    permutation products are exact in floating point, so every relabeling
    of the same box yields a bitwise-identical result (the frame may have
    det -1; it is a descriptor frame, not a rotation).
    """
    products = np.einsum("ij,njk->nik", box.rotation, SIGNED_PERMUTATIONS)
    keys = products.reshape(48, 9)
    best = int(np.lexsort(keys.T[::-1])[-1])
    sizes = np.abs(SIGNED_PERMUTATIONS[best].T) @ box.size
    return products[best], sizes


def canonical_vertices(box: OrientedBox) -> np.ndarray:
    """Box corners enumerated in the canonical frame (relabeling-invariant)."""
    M, sizes = canonical_frame(box)
    return box.center + (CORNER_SIGNS * (0.5 * sizes)) @ M.T


def rotation_set_distance(R_hat, eq_set: RotationEquivalenceSet) -> float:
    """Min over set elements of the mean squared elementwise difference."""
    R_hat = np.asarray(R_hat, dtype=np.float64)
    d = np.mean((eq_set.elements - R_hat) ** 2, axis=(1, 2))
    return float(d.min())


def geodesic_error(R_hat, eq_set: RotationEquivalenceSet) -> float:
    """Min over set elements of the angular difference, in degrees."""
    R_hat = np.asarray(R_hat, dtype=np.float64)
    traces = np.einsum("ij,nij->n", R_hat, eq_set.elements)
    cos = np.clip((traces - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)).min())
