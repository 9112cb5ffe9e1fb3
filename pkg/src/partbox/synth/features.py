"""Per-part / per-pair view descriptors computed from posed, projected boxes.

These fixed-length vectors stand in for the image+mask inputs of the
prediction heads.  Everything is derived from box vertex *sets* put into
a canonical (lexicographically sorted) order before any noise is drawn,
so relabeling a part's rotation annotation cannot change its features.

Part feature layout (PART_FEATURE_DIM):
    [ 8 x sorted world-frame corner offsets (centroid-subtracted)  .. 24
      estimated axis frame of those offsets (PCA, row-major)       ..  9
      projected bounding-rect area proxy                           ..  1
      mean projected (u, v)                                        ..  2
      depth mean / min / max                                       ..  3
      measured sorted edge lengths                                 ..  3
      occlusion flag                                               ..  1
      camera right / up / forward axes and position                .. 12 ]  -> 55

The corner offsets are backprojected from the noisy (u, v, depth)
measurements, so they carry projection noise; the estimated frame is
their PCA basis under a deterministic order/sign convention, the same
construction the oriented-box labels come from (and every bit as
ambiguous, which is exactly what the rotation losses are tested on).
Occluded parts have everything except the flag and camera block zeroed:
their silhouette carries no usable evidence, which is what group pooling
is meant to recover from.

Ordered pair feature (i -> j) layout (PAIR_FEATURE_DIM):
    [ backprojected centroid offset j - i (world)  .. 3
      |offset|                                     .. 1
      measured sorted lengths of i / of j          .. 6
      area_i, area_j                               .. 2
      depth mean_i, mean_j                         .. 2
      occl_i, occl_j                               .. 2
      projected gap along u and v                  .. 2
      min backprojected corner distance            .. 1 ]  -> 17

The symmetric variant used by relation classifiers concatenates the mean
and absolute difference of f(i->j) and f(j->i), which is exactly
order-invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import OrientedBox, canonical_vertices

PART_FEATURE_DIM = 55
PAIR_FEATURE_DIM = 20
SYM_PAIR_FEATURE_DIM = 2 * PAIR_FEATURE_DIM

# part-feature slots (see layout above)
PF_CORNERS = slice(0, 24)
PF_FRAME = slice(24, 33)
PF_AREA = 33
PF_MEAN_UV = slice(34, 36)
PF_DEPTH = slice(36, 39)
PF_SIZES = slice(39, 42)
PF_OCCLUDED = 42
PF_CAMERA = slice(43, 55)


def _estimated_frame(offsets: np.ndarray, sizes_sorted: np.ndarray) -> np.ndarray:
    """Axis-frame estimate from noisy corner offsets.

    From the lexicographically smallest corner, the three edge-connected
    neighbors are identified by matching segment lengths against the
    measured edge lengths (largest first); the matched directions are
    orthonormalized by SVD.  Unlike a PCA basis this stays sharp for
    near-square cross-sections, where eigenvectors degenerate; which of
    two equal edges gets matched first is irrelevant under the axis-set
    quotient.
    """
    rel = offsets[1:] - offsets[0]
    lens = np.linalg.norm(rel, axis=1)
    used = []
    raw = []
    for s in sizes_sorted[::-1]:
        k = min((k for k in range(7) if k not in used), key=lambda k: abs(lens[k] - s))
        used.append(k)
        raw.append(rel[k] / lens[k])
    M = np.stack(raw, axis=1)
    U, _, Vt = np.linalg.svd(M)
    frame = U @ Vt
    if np.linalg.det(frame) < 0:
        frame[:, 2] = -frame[:, 2]
    # canonical orbit representative: lex-largest proper relabeling, so the
    # cue varies piecewise-smoothly with pose instead of jumping between
    # arbitrary equivalent frames
    from ..geometry import PROPER_SIGNED_PERMUTATIONS

    products = np.einsum("ij,njk->nik", frame, PROPER_SIGNED_PERMUTATIONS)
    keys = products.reshape(24, 9)
    return products[int(np.lexsort(keys.T[::-1])[-1])]


@dataclass(frozen=True)
class CameraPose:
    """Perspective camera: position, orthonormal (right, up, forward), vfov."""

    position: np.ndarray
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    vfov_deg: float = 50.0

    def __post_init__(self):
        for name in ("position", "right", "up", "forward"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        f, u, r = self.forward, self.up, self.right
        if abs(np.linalg.norm(np.cross(f, u))) < 1e-9:
            raise ValueError("degenerate camera frame: forward parallel to up")

    @classmethod
    def look_at(cls, position, target, up=(0, 0, 1.0), roll_deg: float = 0.0, vfov_deg: float = 50.0):
        position = np.asarray(position, dtype=np.float64)
        f = np.asarray(target, dtype=np.float64) - position
        nf = np.linalg.norm(f)
        if nf < 1e-12:
            raise ValueError("camera position coincides with target")
        f = f / nf
        upv = np.asarray(up, dtype=np.float64)
        side = np.cross(f, upv)
        ns = np.linalg.norm(side)
        if ns < 1e-9:
            raise ValueError("degenerate camera frame: forward parallel to up")
        r = side / ns
        u = np.cross(r, f)
        if roll_deg:
            c, s = math.cos(math.radians(roll_deg)), math.sin(math.radians(roll_deg))
            r, u = c * r + s * u, -s * r + c * u
        return cls(position, r, u, f, vfov_deg)

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points (n, 3) -> (u, v, depth) rows; depth must be positive."""
        rel = np.atleast_2d(points) - self.position
        depth = rel @ self.forward
        scale = math.tan(math.radians(self.vfov_deg) / 2.0)
        u = (rel @ self.right) / (depth * scale)
        v = (rel @ self.up) / (depth * scale)
        return np.stack([u, v, depth], axis=1)

    def backproject(self, uvd: np.ndarray) -> np.ndarray:
        uvd = np.atleast_2d(uvd)
        scale = math.tan(math.radians(self.vfov_deg) / 2.0)
        d = uvd[:, 2:3]
        return (
            self.position
            + uvd[:, 0:1] * d * scale * self.right
            + uvd[:, 1:2] * d * scale * self.up
            + d * self.forward
        )

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "right": self.right.tolist(),
            "up": self.up.tolist(),
            "forward": self.forward.tolist(),
            "vfov_deg": self.vfov_deg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(d["position"], d["right"], d["up"], d["forward"], d["vfov_deg"])


def sample_camera(shape_center, shape_radius: float, rng: np.random.Generator) -> CameraPose:
    """Random flying view on the upper hemisphere around a shape."""
    azim = rng.uniform(0, 2 * np.pi)
    elev = rng.uniform(np.radians(15.0), np.radians(55.0))
    radius = shape_radius * rng.uniform(2.2, 3.2)
    offset = radius * np.array(
        [np.cos(elev) * np.cos(azim), np.cos(elev) * np.sin(azim), np.sin(elev)]
    )
    target = np.asarray(shape_center) + rng.uniform(-0.05, 0.05, size=3)
    roll = rng.uniform(-10.0, 10.0)
    return CameraPose.look_at(np.asarray(shape_center) + offset, target, roll_deg=roll)


@dataclass
class NoiseConfig:
    """Measurement-noise and occlusion knobs for feature extraction.

    Default sigmas keep the backprojected corner error well below the
    thinnest part extents, so orientation is learnable to a few degrees;
    crank them up to study degradation.
    """

    uv_sigma: float = 0.001
    depth_sigma: float = 0.0005
    size_sigma: float = 0.01
    forced_occlusion_rate: float = 0.0
    visibility_threshold: float = 0.35

    def to_dict(self) -> dict:
        return {
            "uv_sigma": self.uv_sigma,
            "depth_sigma": self.depth_sigma,
            "size_sigma": self.size_sigma,
            "forced_occlusion_rate": self.forced_occlusion_rate,
            "visibility_threshold": self.visibility_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(**d)


@dataclass
class ViewFeatureSet:
    """All features for one (shape, camera) sample."""

    camera: CameraPose
    part_features: np.ndarray  # (n, PART_FEATURE_DIM)
    pair_features: np.ndarray  # (n, n, PAIR_FEATURE_DIM), ordered i -> j
    occluded: np.ndarray  # (n,) bool
    visibility: np.ndarray  # (n,) float

    def pair(self, i: int, j: int) -> np.ndarray:
        return self.pair_features[i, j]

    def sym_pair(self, i: int, j: int) -> np.ndarray:
        return symmetric_pair_feature(self.pair_features[i, j], self.pair_features[j, i])


def symmetric_pair_feature(f_ij: np.ndarray, f_ji: np.ndarray) -> np.ndarray:
    """Exactly order-invariant combination of the two ordered pair features."""
    return np.concatenate([(f_ij + f_ji) / 2.0, np.abs(f_ij - f_ji)])


def _sorted_corner_triples(box: OrientedBox, camera: CameraPose) -> np.ndarray:
    uvd = camera.project(canonical_vertices(box))
    order = np.lexsort((uvd[:, 2], uvd[:, 1], uvd[:, 0]))
    return uvd[order]


def _point_in_hull(points_uv: np.ndarray, hull_uv: np.ndarray) -> np.ndarray:
    """Vectorized convex-hull membership test in 2D.

    `hull_uv` are hull vertices in counterclockwise order.
    """
    inside = np.ones(points_uv.shape[0], dtype=bool)
    m = hull_uv.shape[0]
    for k in range(m):
        a, b = hull_uv[k], hull_uv[(k + 1) % m]
        edge = b - a
        rel = points_uv - a
        cross = edge[0] * rel[:, 1] - edge[1] * rel[:, 0]
        inside &= cross >= -1e-12
    return inside


def _convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counterclockwise vertices."""
    pts = points[np.lexsort((points[:, 1], points[:, 0]))]
    pts = np.unique(pts, axis=0)
    if pts.shape[0] <= 2:
        return pts

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                a, b = out[-1] - out[-2], p - out[-2]
                if a[0] * b[1] - a[1] * b[0] > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def compute_visibility(shape_boxes, camera: CameraPose) -> np.ndarray:
    """Fraction of a part's probe points not hidden behind a nearer part.

    Probes are the 8 projected corners plus the projected center; a probe
    counts as hidden when it falls inside another part's projected hull
    and that part's mean corner depth is smaller than the probe depth.
    """
    n = len(shape_boxes)
    projections = [camera.project(canonical_vertices(b)) for b in shape_boxes]
    hulls = [_convex_hull_2d(p[:, :2]) for p in projections]
    mean_depths = [float(p[:, 2].mean()) for p in projections]
    visibility = np.ones(n)
    for i in range(n):
        probes = np.vstack([projections[i], camera.project(shape_boxes[i].center)])
        hidden = np.zeros(probes.shape[0], dtype=bool)
        for j in range(n):
            if j == i or mean_depths[j] >= mean_depths[i]:
                continue
            hidden |= _point_in_hull(probes[:, :2], hulls[j]) & (
                probes[:, 2] > mean_depths[j]
            )
        visibility[i] = 1.0 - hidden.mean()
    return visibility


def extract_view_features(
    shape, camera: CameraPose, noise: NoiseConfig | None = None, seed: int = 0
) -> ViewFeatureSet:
    """Compute per-part and ordered per-pair features for one view.

    Deterministic per (shape geometry, camera, noise, seed); all noise is
    drawn in canonical corner order, after sorting, so rotation-label
    relabeling cannot perturb the output.
    """
    noise = noise or NoiseConfig()
    rng = np.random.default_rng(seed)
    boxes = list(shape.boxes)
    n = len(boxes)

    visibility = compute_visibility(boxes, camera)
    occluded = visibility < noise.visibility_threshold
    if noise.forced_occlusion_rate > 0:
        occluded = occluded | (rng.uniform(size=n) < noise.forced_occlusion_rate)

    cam_block = np.concatenate([camera.right, camera.up, camera.forward, camera.position])

    corner_blocks = np.zeros((n, 8, 3))
    meas_sizes = np.zeros((n, 3))
    part_feats = np.zeros((n, PART_FEATURE_DIM))
    for i, box in enumerate(boxes):
        triples = _sorted_corner_triples(box, camera)
        noisy = triples.copy()
        noisy[:, :2] += rng.normal(0.0, noise.uv_sigma, size=(8, 2))
        noisy[:, 2] *= 1.0 + rng.normal(0.0, noise.depth_sigma, size=8)
        corner_blocks[i] = noisy
        sizes = np.sort(box.size) * (1.0 + rng.normal(0.0, noise.size_sigma, size=3))
        meas_sizes[i] = sizes
        world = camera.backproject(noisy)
        offsets = world - world.mean(axis=0)
        order = np.lexsort((offsets[:, 2], offsets[:, 1], offsets[:, 0]))
        offsets = offsets[order]
        frame = _estimated_frame(offsets, sizes)
        area = float(
            (noisy[:, 0].max() - noisy[:, 0].min()) * (noisy[:, 1].max() - noisy[:, 1].min())
        )
        mean_uv = np.array([noisy[:, 0].mean(), noisy[:, 1].mean()])
        depth_stats = np.array([noisy[:, 2].mean(), noisy[:, 2].min(), noisy[:, 2].max()])
        if occluded[i]:
            offsets = np.zeros((8, 3))
            frame = np.zeros((3, 3))
            area = 0.0
            mean_uv = np.zeros(2)
            sizes = np.zeros(3)
            meas_sizes[i] = sizes
        part_feats[i] = np.concatenate(
            [
                offsets.reshape(24),
                frame.reshape(9),
                [area],
                mean_uv,
                depth_stats,
                sizes,
                [float(occluded[i])],
                cam_block,
            ]
        )

    centroids = np.stack(
        [camera.backproject(corner_blocks[i]).mean(axis=0) for i in range(n)]
    )
    areas = part_feats[:, PF_AREA]
    depth_means = part_feats[:, PF_DEPTH.start]
    u_ranges = [(corner_blocks[i][:, 0].min(), corner_blocks[i][:, 0].max()) for i in range(n)]
    v_ranges = [(corner_blocks[i][:, 1].min(), corner_blocks[i][:, 1].max()) for i in range(n)]

    frames = [part_feats[i][PF_FRAME].reshape(3, 3) for i in range(n)]
    frame_dist = np.full((n, n), -1.0)
    for i in range(n):
        if occluded[i]:
            continue
        from ..geometry import SIGNED_PERMUTATIONS

        orbit_i = np.einsum("ij,njk->nik", frames[i], SIGNED_PERMUTATIONS)
        for j in range(n):
            if j == i or occluded[j]:
                continue
            frame_dist[i, j] = float(np.mean((orbit_i - frames[j]) ** 2, axis=(1, 2)).min())

    pair_feats = np.zeros((n, n, PAIR_FEATURE_DIM))
    for i in range(n):
        bp_i = camera.backproject(corner_blocks[i])
        for j in range(n):
            if i == j:
                continue
            offset = centroids[j] - centroids[i]
            bp_j = camera.backproject(corner_blocks[j])
            dmin = float(
                np.sqrt(((bp_i[:, None, :] - bp_j[None, :, :]) ** 2).sum(axis=2).min())
            )
            gap_u = max(
                u_ranges[i][0] - u_ranges[j][1], u_ranges[j][0] - u_ranges[i][1], 0.0
            )
            gap_v = max(
                v_ranges[i][0] - v_ranges[j][1], v_ranges[j][0] - v_ranges[i][1], 0.0
            )
            pair_feats[i, j] = np.concatenate(
                [
                    offset,
                    [float(np.linalg.norm(offset))],
                    meas_sizes[i],
                    meas_sizes[j],
                    [areas[i], areas[j]],
                    [depth_means[i], depth_means[j]],
                    [float(occluded[i]), float(occluded[j])],
                    [gap_u, gap_v],
                    [dmin],
                    [frame_dist[i, j]],
                ]
            )
    return ViewFeatureSet(camera, part_feats, pair_feats, occluded, visibility)
