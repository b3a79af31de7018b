"""Keypoint detection, description, cross-warp merging and matching.

Classical stand-ins: a difference-of-Gaussians extremum detector with
subpixel refinement, and an upright 4x4 x 8-bin root-gradient-histogram
descriptor (128-D, L2-normalized).  Externally computed features can be
injected through the MATCHSET binary format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import FormatError, ImageTooSmall

ORIGINAL = -1  # provenance marker for features from the unwarped image

MAGIC_FEAT = b"FEAT"
DESCRIPTOR_DIM = 128

INVALID_MARGIN_PX = 8  # no detections this close to invalid pixels


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    response: float
    provenance: int = ORIGINAL

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


def _scale_space(img, n_levels, base_sigma, k):
    sigmas = base_sigma * k ** np.arange(n_levels)
    gaussians = [ndimage.gaussian_filter(img, s, mode="nearest") for s in sigmas]
    dogs = np.stack([gaussians[i + 1] - gaussians[i] for i in range(n_levels - 1)])
    return sigmas, dogs


def detect(
    image: np.ndarray,
    max_keypoints: int = 2000,
    valid_mask: np.ndarray | None = None,
    contrast_threshold: float = 0.01,
    edge_ratio: float = 10.0,
    n_levels: int = 10,
    base_sigma: float = 1.6,
) -> list:
    """DoG extrema with quadratic subpixel refinement, strongest first.

    ``valid_mask`` marks usable pixels; detections within
    INVALID_MARGIN_PX of an invalid pixel are suppressed.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ImageTooSmall("expected a grayscale image")
    h, w = img.shape
    if min(h, w) < 32:
        raise ImageTooSmall(f"min side {min(h, w)} < 32")
    rng_span = float(img.max() - img.min())
    if rng_span <= 0:
        return []
    img = (img - img.min()) / rng_span

    k = 2.0 ** (1.0 / 3.0)
    sigmas, dogs = _scale_space(img, n_levels, base_sigma, k)

    if valid_mask is not None:
        allowed = ~ndimage.binary_dilation(
            ~np.asarray(valid_mask, dtype=bool), iterations=INVALID_MARGIN_PX
        )
    else:
        allowed = np.ones((h, w), dtype=bool)
    border = INVALID_MARGIN_PX
    allowed = allowed.copy()
    allowed[:border, :] = allowed[-border:, :] = False
    allowed[:, :border] = allowed[:, -border:] = False

    footprint = np.ones((3, 3, 3), dtype=bool)
    maxf = ndimage.maximum_filter(dogs, footprint=footprint, mode="nearest")
    minf = ndimage.minimum_filter(dogs, footprint=footprint, mode="nearest")
    is_ext = ((dogs == maxf) | (dogs == minf)) & (np.abs(dogs) > contrast_threshold)
    is_ext[0] = is_ext[-1] = False
    is_ext &= allowed[None, :, :]

    zs, ys, xs = np.nonzero(is_ext)
    keypoints = []
    edge_thr = (edge_ratio + 1.0) ** 2 / edge_ratio
    for z, y, x in zip(zs, ys, xs):
        d = dogs
        # Hessian in the image plane for edge rejection
        dxx = d[z, y, x + 1] + d[z, y, x - 1] - 2 * d[z, y, x]
        dyy = d[z, y + 1, x] + d[z, y - 1, x] - 2 * d[z, y, x]
        dxy = (
            d[z, y + 1, x + 1] - d[z, y + 1, x - 1]
            - d[z, y - 1, x + 1] + d[z, y - 1, x - 1]
        ) / 4.0
        tr = dxx + dyy
        det = dxx * dyy - dxy * dxy
        if det <= 0 or tr * tr / det > edge_thr:
            continue
        # quadratic refinement of (x, y, scale)
        g = np.array(
            [
                (d[z, y, x + 1] - d[z, y, x - 1]) / 2.0,
                (d[z, y + 1, x] - d[z, y - 1, x]) / 2.0,
                (d[z + 1, y, x] - d[z - 1, y, x]) / 2.0,
            ]
        )
        dss = d[z + 1, y, x] + d[z - 1, y, x] - 2 * d[z, y, x]
        dxs = (
            d[z + 1, y, x + 1] - d[z + 1, y, x - 1]
            - d[z - 1, y, x + 1] + d[z - 1, y, x - 1]
        ) / 4.0
        dys = (
            d[z + 1, y + 1, x] - d[z + 1, y - 1, x]
            - d[z - 1, y + 1, x] + d[z - 1, y - 1, x]
        ) / 4.0
        Hm = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        try:
            off = -np.linalg.solve(Hm, g)
        except np.linalg.LinAlgError:
            off = np.zeros(3)
        if np.any(np.abs(off) > 1.5):
            off = np.clip(off, -1.5, 1.5)
        response = d[z, y, x] + 0.5 * float(g @ off)
        scale = sigmas[z] * k ** off[2]
        keypoints.append(
            Keypoint(x + off[0], y + off[1], float(scale), float(response))
        )
    keypoints.sort(key=lambda p: (-abs(p.response), p.y, p.x))
    return keypoints[:max_keypoints]


def describe(image: np.ndarray, keypoints: list) -> np.ndarray:
    """Upright 4x4-grid x 8-orientation-bin descriptors, (n, 128) float32.

    Patch extent is proportional to the keypoint scale; the histogram is
    L2-normalized, square-root transformed and renormalized, which makes
    it invariant to linear brightness scaling.
    """
    img = np.asarray(image, dtype=float)
    n = len(keypoints)
    out = np.zeros((n, DESCRIPTOR_DIM), dtype=np.float32)
    if n == 0:
        return out
    grid = 16  # samples per side
    for i, kp in enumerate(keypoints):
        spacing = max(kp.scale, 0.8) * 0.75
        half = (grid - 1) / 2.0
        coords = (np.arange(grid) - half) * spacing
        xs = kp.x + coords[None, :].repeat(grid, axis=0)
        ys = kp.y + coords[:, None].repeat(grid, axis=1)
        patch = ndimage.map_coordinates(
            img, [ys.ravel(), xs.ravel()], order=1, mode="nearest"
        ).reshape(grid, grid)
        gy, gx = np.gradient(patch)
        mag = np.hypot(gx, gy)
        ori = np.arctan2(gy, gx) % (2 * np.pi)
        # gaussian spatial weighting
        r2 = ((np.arange(grid) - half) ** 2)[None, :] + (
            (np.arange(grid) - half) ** 2
        )[:, None]
        mag = mag * np.exp(-r2 / (2 * (0.5 * grid) ** 2))

        cell = (np.arange(grid) * 4 // grid)
        ob = ori / (2 * np.pi) * 8.0
        o0 = np.floor(ob).astype(int) % 8
        o1 = (o0 + 1) % 8
        w1 = ob - np.floor(ob)
        hist = np.zeros((4, 4, 8))
        cy = cell[:, None].repeat(grid, axis=1)
        cx = cell[None, :].repeat(grid, axis=0)
        np.add.at(hist, (cy, cx, o0), mag * (1.0 - w1))
        np.add.at(hist, (cy, cx, o1), mag * w1)
        v = hist.ravel()
        nrm = np.linalg.norm(v)
        if nrm > 1e-12:
            v = v / nrm
            v = np.minimum(v, 0.2)
            v /= np.linalg.norm(v)
            v = np.sqrt(v)
            v /= np.linalg.norm(v)
        out[i] = v
    return out


def merge_features(sets: list, dedupe_radius_px: float = 2.0) -> tuple:
    """Union of (keypoints, descriptors) sets with rectified-only dedupe.

    Keypoints must already be in original-image coordinates.  Among
    RECTIFIED features (provenance != ORIGINAL), neighbors within
    ``dedupe_radius_px`` keep only the strongest (ties: lower warp
    index); ORIGINAL features are always kept.
    """
    from scipy.spatial import cKDTree

    all_kps = []
    all_desc = []
    for kps, desc in sets:
        all_kps.extend(kps)
        all_desc.extend(np.asarray(desc))
    originals = [
        (kp, d) for kp, d in zip(all_kps, all_desc) if kp.provenance == ORIGINAL
    ]
    rectified = [
        (kp, d) for kp, d in zip(all_kps, all_desc) if kp.provenance != ORIGINAL
    ]
    kept_rect = []
    if rectified:
        order = sorted(
            range(len(rectified)),
            key=lambda i: (
                -abs(rectified[i][0].response),
                rectified[i][0].provenance,
                rectified[i][0].y,
                rectified[i][0].x,
            ),
        )
        pts = np.array([[rectified[i][0].x, rectified[i][0].y] for i in order])
        kept_idx = []
        tree = None
        for j in range(len(order)):
            if kept_idx:
                tree = cKDTree(pts[kept_idx])
                if tree.query_ball_point(pts[j], dedupe_radius_px):
                    continue
            kept_idx.append(j)
        kept_rect = [rectified[order[j]] for j in kept_idx]
    merged = originals + kept_rect
    kps = [kp for kp, _ in merged]
    desc = (
        np.stack([d for _, d in merged]).astype(np.float32)
        if merged
        else np.zeros((0, DESCRIPTOR_DIM), dtype=np.float32)
    )
    return kps, desc


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    distance: float
    ratio: float


def match(desc_a: np.ndarray, desc_b: np.ndarray, ratio_threshold: float = 0.8) -> list:
    """Mutual nearest neighbors under L2 with a symmetric Lowe ratio test.

    The ratio is the worse of the two sides' ratios, so the result is
    symmetric in its arguments.  A zero second-nearest distance (exact
    duplicates) disables the ratio test for that feature.
    """
    a = np.asarray(desc_a, dtype=float)
    b = np.asarray(desc_b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        return []
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    d2 = np.maximum(d2, 0.0)
    nn_ab = np.argmin(d2, axis=1)
    nn_ba = np.argmin(d2, axis=0)

    def side_ratio(dists):
        # dists: sorted two smallest squared distances
        d1 = np.sqrt(dists[0])
        d2_ = np.sqrt(dists[1]) if len(dists) > 1 else 0.0
        if d2_ <= 1e-12:
            return 0.0 if d1 <= 1e-12 else 1.0
        return d1 / d2_

    out = []
    for ia, ib in enumerate(nn_ab):
        if nn_ba[ib] != ia:
            continue
        row = np.partition(d2[ia], min(1, len(b) - 1))[:2]
        col = np.partition(d2[:, ib], min(1, len(a) - 1))[:2]
        r = max(side_ratio(np.sort(row)), side_ratio(np.sort(col)))
        if r <= ratio_threshold:
            out.append(Match(int(ia), int(ib), float(np.sqrt(d2[ia, ib])), float(r)))
    out.sort(key=lambda m: (m.index_a, m.index_b))
    return out


def save_matchset(path, keypoints: list, descriptors: np.ndarray):
    desc = np.asarray(descriptors, dtype="<f4")
    if desc.shape != (len(keypoints), DESCRIPTOR_DIM):
        raise FormatError(
            f"descriptors {desc.shape} do not match {len(keypoints)} keypoints"
        )
    with open(path, "wb") as f:
        f.write(MAGIC_FEAT)
        f.write(struct.pack("<II", 1, len(keypoints)))
        for kp, d in zip(keypoints, desc):
            f.write(
                struct.pack("<ffffi", kp.x, kp.y, kp.scale, kp.response, kp.provenance)
            )
            f.write(d.tobytes())


def load_matchset(path) -> tuple:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC_FEAT:
            raise FormatError("bad MATCHSET magic")
        version, n = struct.unpack("<II", f.read(8))
        if version != 1:
            raise FormatError(f"unsupported MATCHSET version {version}")
        rec_size = 20 + DESCRIPTOR_DIM * 4
        payload = f.read()
    if len(payload) != n * rec_size:
        raise FormatError(f"payload {len(payload)} bytes, expected {n * rec_size}")
    kps = []
    desc = np.zeros((n, DESCRIPTOR_DIM), dtype=np.float32)
    for i in range(n):
        off = i * rec_size
        x, y, scale, response, prov = struct.unpack(
            "<ffffi", payload[off : off + 20]
        )
        kps.append(Keypoint(x, y, scale, response, prov))
        desc[i] = np.frombuffer(payload[off + 20 : off + rec_size], dtype="<f4")
    return kps, desc
