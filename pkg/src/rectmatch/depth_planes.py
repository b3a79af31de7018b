"""Depth map -> surface normals -> unit-sphere clustering -> plane
segments -> fronto-parallel rectifying homographies.

Normals are computed from central differences of the back-projected
surface; clustering votes among roughly equidistant sphere buckets and
greedily extracts the strongest ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    DimensionMismatch,
    InvalidParameter,
    NormalFacesAway,
    TooManyClusters,
)

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidParameter("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def from_matrix(cls, K) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=float)
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2])


@dataclass(frozen=True)
class NormalMap:
    """Per-pixel unit normals (camera frame, z < 0) with a validity mask."""

    normals: np.ndarray  # (h, w, 3), NaN where invalid
    valid: np.ndarray  # (h, w) bool


@dataclass(frozen=True)
class PlaneCluster:
    mean_normal: np.ndarray
    vote_count: int
    member_pixel_fraction: float


@dataclass(frozen=True)
class SegmentMask:
    mask: np.ndarray
    cluster_id: int | None = None

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


def normals_from_depth(depth: np.ndarray, K: CameraIntrinsics) -> NormalMap:
    """Per-pixel normals of the back-projected surface X(u,v) = d * K^-1 (u,v,1).

    Central differences along u and v give the tangents; the normalized
    cross product is flipped to face the camera (n_z < 0).  Pixels with
    invalid depth (<= 0 or non-finite), their 4-neighbors, and the image
    border are INVALID.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.ndim != 2:
        raise DimensionMismatch("depth must be a 2-D array")
    h, w = depth.shape
    depth_ok = np.isfinite(depth) & (depth > 0)
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    X = np.empty((h, w, 3))
    X[..., 0] = depth * (u - K.cx) / K.fx
    X[..., 1] = depth * (v - K.cy) / K.fy
    X[..., 2] = depth

    tu = np.empty_like(X)
    tv = np.empty_like(X)
    tu[:, 1:-1] = (X[:, 2:] - X[:, :-2]) / 2.0
    tv[1:-1, :] = (X[2:, :] - X[:-2, :]) / 2.0
    n = np.cross(tu, tv)
    norm = np.linalg.norm(n, axis=-1)

    valid = depth_ok.copy()
    bad = ~depth_ok
    grown = ndimage.binary_dilation(bad, structure=FOUR_CONNECTED)
    valid &= ~grown
    valid[0, :] = valid[-1, :] = False
    valid[:, 0] = valid[:, -1] = False
    valid &= norm > 1e-12

    with np.errstate(invalid="ignore", divide="ignore"):
        n = n / norm[..., None]
    flip = n[..., 2] > 0
    n[flip] *= -1.0
    n[~valid] = np.nan
    return NormalMap(n, valid)


def sphere_buckets(n: int) -> np.ndarray:
    """n points roughly equidistant on the unit sphere (generalized spiral)."""
    if n < 1:
        raise InvalidParameter("n must be >= 1")
    if n == 1:
        return np.array([[0.0, 0.0, 1.0]])
    # midpoint-offset heights avoid pole crowding of the endpoint variant
    k = np.arange(1, n + 1, dtype=float)
    h = -1.0 + (2.0 * k - 1.0) / n
    theta = np.arccos(np.clip(h, -1.0, 1.0))
    phi = np.zeros(n)
    for i in range(1, n):
        phi[i] = phi[i - 1] + 3.6 / np.sqrt(n * (1.0 - h[i] ** 2))
    pts = np.stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)],
        axis=1,
    )
    return pts


def bucket_angular_spacing(n_buckets: int) -> float:
    """Ideal equal-area spacing sqrt(4*pi/n) in radians."""
    return float(np.sqrt(4.0 * np.pi / n_buckets))


def fold_hemisphere(normals: np.ndarray) -> np.ndarray:
    """Fold antipodal normals into the camera-facing hemisphere (n_z <= 0)."""
    folded = normals.copy()
    flip = folded[..., 2] > 0
    folded[flip] *= -1.0
    return folded


def cluster_normals(
    normal_map: NormalMap,
    buckets: np.ndarray,
    min_votes: int,
    refine: str = "mean",
    assign_radius: float | None = None,
) -> list:
    """Greedy bucket-vote clustering of normals on the unit sphere.

    Each valid normal (after antipodal folding) votes for its nearest
    bucket.  The max-vote bucket is extracted, all unclaimed normals
    within ``assign_radius`` of it are claimed, the center is optionally
    refined (normalized mean or mean-shift with an angular Gaussian
    kernel), and the loop repeats while the best bucket still holds at
    least ``min_votes`` votes.
    """
    if refine not in ("none", "mean", "mean_shift"):
        raise InvalidParameter(f"unknown refine mode {refine!r}")
    if len(buckets) == 0:
        raise InvalidParameter("buckets must be non-empty")
    normals = fold_hemisphere(normal_map.normals[normal_map.valid])
    n_total = len(normals)
    if n_total == 0:
        return []
    if assign_radius is None:
        assign_radius = 1.5 * bucket_angular_spacing(len(buckets))
    cos_radius = np.cos(assign_radius)

    dots = normals @ buckets.T
    nearest = np.argmax(dots, axis=1)
    votes = np.bincount(nearest, minlength=len(buckets))

    claimed = np.zeros(n_total, dtype=bool)
    clusters = []
    while True:
        best = int(np.argmax(votes))
        if votes[best] < max(min_votes, 1):
            break
        center = buckets[best]
        members = (~claimed) & ((normals @ center >= cos_radius) | (nearest == best))
        if not members.any():
            votes[best] = 0
            continue
        if refine == "mean":
            center = _normalized_mean(normals[members])
        elif refine == "mean_shift":
            center = _mean_shift(normals[members], center, assign_radius)
        count = int(np.count_nonzero(members))
        clusters.append(
            PlaneCluster(center, count, count / n_total)
        )
        claimed |= members
        votes = np.bincount(nearest[~claimed], minlength=len(buckets))
    return clusters


def _normalized_mean(normals: np.ndarray) -> np.ndarray:
    m = normals.mean(axis=0)
    return m / np.linalg.norm(m)


def _mean_shift(normals, center, bandwidth, max_iter=20, tol_deg=0.1):
    tol = np.deg2rad(tol_deg)
    for _ in range(max_iter):
        ang = np.arccos(np.clip(normals @ center, -1.0, 1.0))
        w = np.exp(-0.5 * (ang / (bandwidth / 2.0)) ** 2)
        new = (w[:, None] * normals).sum(axis=0)
        new /= np.linalg.norm(new)
        shift = np.arccos(np.clip(new @ center, -1.0, 1.0))
        center = new
        if shift < tol:
            break
    return center


def orthogonalize_clusters(clusters: list) -> list:
    """Replace 1-3 cluster normals with the nearest orthonormal frame rows."""
    if len(clusters) > 3:
        raise TooManyClusters(f"{len(clusters)} clusters, at most 3 supported")
    if len(clusters) <= 1:
        return list(clusters)
    M = np.stack([c.mean_normal for c in clusters])
    U, _, Vt = np.linalg.svd(M, full_matrices=False)
    R = U @ Vt
    return [
        PlaneCluster(R[i], c.vote_count, c.member_pixel_fraction)
        for i, c in enumerate(clusters)
    ]


def segment_clusters(
    normal_map: NormalMap,
    clusters: list,
    min_area: int,
    assign_radius: float | None = None,
) -> list:
    """4-connected components of per-cluster normal membership.

    Each valid pixel is assigned to the nearest cluster center within
    ``assign_radius``; components smaller than ``min_area`` are dropped.
    Remaining valid pixels form the residual segment (cluster_id None),
    so the returned masks partition the valid-pixel set exactly.
    """
    if assign_radius is None:
        assign_radius = 1.5 * bucket_angular_spacing(500)
    h, w = normal_map.valid.shape
    segments = []
    claimed = np.zeros((h, w), dtype=bool)
    if clusters:
        folded = fold_hemisphere(np.nan_to_num(normal_map.normals))
        centers = np.stack([c.mean_normal for c in clusters])
        dots = folded @ centers.T  # (h, w, k)
        best = np.argmax(dots, axis=-1)
        best_dot = np.take_along_axis(dots, best[..., None], axis=-1)[..., 0]
        assigned = normal_map.valid & (best_dot >= np.cos(assign_radius))
        for ci in range(len(clusters)):
            membership = assigned & (best == ci)
            labels, n_comp = ndimage.label(membership, structure=FOUR_CONNECTED)
            for comp in range(1, n_comp + 1):
                mask = labels == comp
                if np.count_nonzero(mask) >= min_area:
                    segments.append(SegmentMask(mask, ci))
                    claimed |= mask
    residual = normal_map.valid & ~claimed
    if residual.any():
        segments.append(SegmentMask(residual, None))
    return segments


def rotation_to_axis(n: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit vector n to unit vector target."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    c = float(np.dot(n, target))
    if c > 1.0 - 1e-12:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        # 180 degrees about any axis orthogonal to n
        axis = np.cross(n, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(n, [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        return _rodrigues(axis, np.pi)
    axis = np.cross(n, target)
    axis /= np.linalg.norm(axis)
    return _rodrigues(axis, np.arccos(np.clip(c, -1.0, 1.0)))


def _rodrigues(axis, angle):
    Kx = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(angle) * Kx + (1 - np.cos(angle)) * (Kx @ Kx)


def homography_jacobian_det(H: np.ndarray, point: np.ndarray) -> float:
    """Determinant of the Jacobian of the projective map H at a point."""
    x, y = float(point[0]), float(point[1])
    denom = H[2, 0] * x + H[2, 1] * y + H[2, 2]
    return float(np.linalg.det(H) / denom**3)


def fronto_parallel_homography(
    n: np.ndarray, K: CameraIntrinsics, centroid=None
) -> np.ndarray:
    """H = K R K^-1 with R the minimal rotation taking n to (0, 0, -1),
    composed with an isotropic scale so the Jacobian determinant at the
    segment centroid is 1 (locally area preserving)."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    if n[2] >= 0:
        raise NormalFacesAway(f"normal z-component {n[2]:g} must be negative")
    if centroid is None:
        centroid = np.array([K.cx, K.cy])
    R = rotation_to_axis(n, np.array([0.0, 0.0, -1.0]))
    Km = K.matrix()
    H = Km @ R @ np.linalg.inv(Km)
    j = homography_jacobian_det(H, centroid)
    if j <= 0:
        raise NormalFacesAway("homography folds at the segment centroid")
    alpha = 1.0 / np.sqrt(j)
    H = np.diag([alpha, alpha, 1.0]) @ H
    return H / H[2, 2]
