"""Deterministic synthetic two-view scenes with exact ground truth.

Textured planes are ray-cast under two pinhole cameras, producing
images, depth maps, relative pose, plane-induced homographies, and the
true per-cell rectifying shape field of each view.  Scene types:
``single_plane`` (fronto-parallel to camera A, camera B orbited to a
target tilt), ``two_planes`` (a roof joint), and ``cube_corner`` (three
orthogonal faces meeting on the optical axis).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .depth_planes import CameraIntrinsics, fronto_parallel_homography, rotation_to_axis
from .errors import InvalidSpec
from .shape_field import DenseShapeField

SCENE_TYPES = ("single_plane", "two_planes", "cube_corner")


@dataclass(frozen=True)
class SceneSpec:
    scene: str = "single_plane"
    seed: int = 0
    width: int = 256
    height: int = 256
    focal: float = 300.0
    plane_depth: float = 5.0
    tilt: float = 1.0  # target view-b tilt for single_plane
    orbit_deg: float = 10.0  # camera-b orbit for the multi-plane scenes
    roof_angle_deg: float = 30.0  # two_planes half-opening
    texture_scale: float = 60.0  # texture pixels per world unit

    def __post_init__(self):
        if self.scene not in SCENE_TYPES:
            raise InvalidSpec(f"unknown scene type {self.scene!r}")
        if self.tilt < 1.0:
            raise InvalidSpec("tilt must be >= 1")


@dataclass(frozen=True)
class Camera:
    R: np.ndarray  # world -> camera rotation
    C: np.ndarray  # camera center in world coordinates

    def translation(self) -> np.ndarray:
        return -self.R @ self.C


@dataclass(frozen=True)
class SyntheticPair:
    spec: SceneSpec
    K: CameraIntrinsics
    image_a: np.ndarray
    image_b: np.ndarray
    depth_a: np.ndarray
    depth_b: np.ndarray
    R_rel: np.ndarray  # camera a -> camera b rotation
    t_rel: np.ndarray
    H_gt: np.ndarray | None  # plane-induced homography a -> b (planar scenes)
    field_a: DenseShapeField
    field_b: DenseShapeField
    labels_a: np.ndarray  # per-pixel plane index, -1 = background
    labels_b: np.ndarray
    plane_normals_a: np.ndarray  # per-plane camera-frame unit normals, z < 0
    plane_normals_b: np.ndarray


def _texture(seed, size=1024):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((size, size))
    tex = ndimage.gaussian_filter(noise, 1.5, mode="wrap")
    tex -= tex.min()
    tex /= tex.max()
    return tex


def _sample_texture(tex, u, v, scale):
    return ndimage.map_coordinates(
        tex, [v * scale, u * scale], order=1, mode="wrap"
    )


def _look_at(C, target, up=np.array([0.0, 1.0, 0.0])):
    """World->camera rotation for a camera at C looking toward target."""
    z = target - C
    z = z / np.linalg.norm(z)
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])  # rows are the camera axes


def _orbit_camera(pivot, angle_rad, axis):
    """Camera orbited around ``pivot`` from the origin by angle about axis."""
    R_orb = _axis_angle(axis, angle_rad)
    C = pivot + R_orb @ (np.zeros(3) - pivot)
    return Camera(_look_at(C, pivot), C)


def _axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    Kx = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(angle) * Kx + (1 - np.cos(angle)) * (Kx @ Kx)


def _planes_for_scene(spec: SceneSpec):
    """World-frame planes as (normal, d) with n^T X = d, plus texture offsets."""
    d0 = spec.plane_depth
    if spec.scene == "single_plane":
        return [(np.array([0.0, 0.0, 1.0]), d0)]
    if spec.scene == "two_planes":
        a = np.deg2rad(spec.roof_angle_deg)
        # both planes contain the line x = 0, z = d0
        n1 = _axis_angle([0, 1, 0], a) @ np.array([0.0, 0.0, 1.0])
        n2 = _axis_angle([0, 1, 0], -a) @ np.array([0.0, 0.0, 1.0])
        return [(n1, n1[2] * d0), (n2, n2[2] * d0)]
    # cube_corner: three orthonormal plane normals whose average is the axis
    R0 = rotation_to_axis(np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0), np.array([0.0, 0.0, 1.0]))
    planes = []
    for e in np.eye(3):
        u = R0 @ e
        planes.append((u, d0 / np.sqrt(3.0)))
    return planes


def _select_plane(spec, origins, dirs, planes):
    """Per-ray plane choice and hit parameter; -1 where no hit."""
    n_rays = len(dirs)
    best_t = np.full(n_rays, np.inf)
    best_i = np.full(n_rays, -1, dtype=int)
    for i, (n, d) in enumerate(planes):
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (d - origins @ n) / denom
        ok = (denom > 1e-12) & (t > 1e-6)
        if spec.scene == "two_planes":
            X = origins + t[:, None] * dirs
            side = X[:, 0] <= 1e-9 if i == 0 else X[:, 0] >= -1e-9
            ok &= side
            better = ok & (t < best_t)
        elif spec.scene == "cube_corner":
            better = ok & (t < best_t)
        else:
            better = ok & (t < best_t)
        best_t[better] = t[better]
        best_i[better] = i
    return best_i, best_t


def _render(spec, cam: Camera, K: CameraIntrinsics, planes, tex):
    h, w = spec.height, spec.width
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    rays_cam = np.stack(
        [(u.ravel() - K.cx) / K.fx, (v.ravel() - K.cy) / K.fy, np.ones(h * w)], axis=1
    )
    dirs = rays_cam @ cam.R  # R^T applied row-wise
    origins = np.broadcast_to(cam.C, dirs.shape)
    idx, t = _select_plane(spec, origins, dirs, planes)
    hit = idx >= 0
    X = origins + t[:, None] * dirs
    img = np.zeros(h * w)
    # texture coordinates: project onto each plane's in-plane axes
    for i, (n, d) in enumerate(planes):
        sel = hit & (idx == i)
        if not sel.any():
            continue
        e1 = np.cross(n, [0.0, 1.0, 0.0])
        if np.linalg.norm(e1) < 1e-9:
            e1 = np.cross(n, [1.0, 0.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        img[sel] = _sample_texture(
            tex, X[sel] @ e1, X[sel] @ e2, spec.texture_scale
        )
    depth = np.where(hit, t * rays_cam[:, 2], 0.0)
    labels = np.where(hit, idx, -1)
    return (
        img.reshape(h, w),
        depth.reshape(h, w),
        labels.reshape(h, w).astype(int),
    )


def _camera_frame_normals(cam: Camera, planes):
    """Per-plane unit normals in the camera frame, flipped to face it."""
    out = []
    for n, _ in planes:
        nc = cam.R @ n
        if nc[2] > 0:
            nc = -nc
        out.append(nc)
    return np.stack(out)


def _true_shape_field(spec, K, labels, normals_cam, cell_size=4):
    """Det-normalized linearization of each plane's fronto-parallel map."""
    h, w = labels.shape
    hc = -(-h // cell_size)
    wc = -(-w // cell_size)
    shapes = np.broadcast_to(np.eye(2), (hc, wc, 2, 2)).copy()
    homs = []
    for n in normals_cam:
        if n[2] < 0:
            homs.append(fronto_parallel_homography(n, K))
        else:
            homs.append(np.eye(3))
    for r in range(hc):
        for c in range(wc):
            py = min(r * cell_size + cell_size // 2, h - 1)
            px = min(c * cell_size + cell_size // 2, w - 1)
            lab = labels[py, px]
            if lab < 0:
                continue
            H = homs[lab]
            x, y = float(px), float(py)
            denom = H[2, 0] * x + H[2, 1] * y + H[2, 2]
            num = H[:2, 2] + H[:2, :2] @ np.array([x, y])
            lin = H[:2, :2] / denom - np.outer(num, H[2, :2]) / denom**2
            det = np.linalg.det(lin)
            if det > 1e-12:
                shapes[r, c] = lin / np.sqrt(det)
    return DenseShapeField(shapes.astype(np.float32), cell_size, w, h)


def plane_homography(K: CameraIntrinsics, R_rel, t_rel, n_a, d_a):
    """Plane-induced homography a -> b for the plane n_a^T X = d_a (frame a)."""
    Km = K.matrix()
    H = Km @ (R_rel + np.outer(t_rel, n_a) / d_a) @ np.linalg.inv(Km)
    return H / H[2, 2]


def generate_synthetic_pair(spec: SceneSpec) -> SyntheticPair:
    """Render a deterministic two-view scene with exact ground truth."""
    K = CameraIntrinsics(
        spec.focal, spec.focal, (spec.width - 1) / 2.0, (spec.height - 1) / 2.0
    )
    tex = _texture(spec.seed)
    planes = _planes_for_scene(spec)
    pivot = np.array([0.0, 0.0, spec.plane_depth])

    cam_a = Camera(np.eye(3), np.zeros(3))
    if spec.scene == "single_plane" and spec.tilt > 1.0:
        angle = np.arccos(1.0 / spec.tilt)
        cam_b = _orbit_camera(pivot, angle, [1.0, 0.0, 0.0])
    else:
        cam_b = _orbit_camera(pivot, np.deg2rad(spec.orbit_deg), [0.0, 1.0, 0.0])

    image_a, depth_a, labels_a = _render(spec, cam_a, K, planes, tex)
    image_b, depth_b, labels_b = _render(spec, cam_b, K, planes, tex)

    R_rel = cam_b.R @ cam_a.R.T
    t_rel = cam_b.translation() - R_rel @ cam_a.translation()

    H_gt = None
    if spec.scene == "single_plane":
        n_a, d_a = planes[0]  # world == frame a
        H_gt = plane_homography(K, R_rel, t_rel, n_a, d_a)

    normals_a = _camera_frame_normals(cam_a, planes)
    normals_b = _camera_frame_normals(cam_b, planes)
    field_a = _true_shape_field(spec, K, labels_a, normals_a)
    field_b = _true_shape_field(spec, K, labels_b, normals_b)

    return SyntheticPair(
        spec=spec,
        K=K,
        image_a=image_a,
        image_b=image_b,
        depth_a=depth_a,
        depth_b=depth_b,
        R_rel=R_rel,
        t_rel=t_rel,
        H_gt=H_gt,
        field_a=field_a,
        field_b=field_b,
        labels_a=labels_a,
        labels_b=labels_b,
        plane_normals_a=normals_a,
        plane_normals_b=normals_b,
    )
