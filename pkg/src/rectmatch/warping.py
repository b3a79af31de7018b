"""Masked affine/homography warps with anisotropic anti-aliasing and
exact keypoint backprojection.

Warps are computed by inverse sampling into the source image.  Before
resampling, a directional Gaussian blur with sigma = 0.8*sqrt(t^2 - 1)
(t the map tilt) is applied along the compressed source axis, realized
as weighted taps along that axis during sampling.  Output is cropped to
the bounding box of the mapped mask and the crop offset recorded so
original-frame coordinates stay recoverable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core_geometry import AffineMap, decompose_affine
from .errors import EmptyMask, OversizeWarp, SingularMap

BLUR_CONSTANT = 0.8
OVERSIZE_FACTOR = 16.0


def as_homography(map_) -> np.ndarray:
    if isinstance(map_, AffineMap):
        return map_.to_homography()
    H = np.asarray(map_, dtype=float)
    if H.shape != (3, 3):
        raise SingularMap(f"map must be an AffineMap or 3x3 array, got {H.shape}")
    return H / H[2, 2] if H[2, 2] != 0 else H


def apply_homography(H: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ph = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ H.T
    return ph[:, :2] / ph[:, 2:3]


@dataclass(frozen=True)
class WarpRecord:
    map: np.ndarray  # 3x3 homography (affine maps have [0,0,1] last row)
    crop_offset: np.ndarray  # pixels, warped frame
    warped_size: tuple  # (w, h)
    source_mask: np.ndarray  # bool mask in the source frame
    blur_sigma_major: float

    @property
    def area(self) -> int:
        return int(self.warped_size[0]) * int(self.warped_size[1])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Source-frame points -> warped (cropped) frame."""
        return apply_homography(self.map, points) - self.crop_offset

    def to_json_dict(self) -> dict:
        return {
            "map": self.map.tolist(),
            "crop_offset": self.crop_offset.tolist(),
            "warped_size": [int(self.warped_size[0]), int(self.warped_size[1])],
            "blur_sigma_major": self.blur_sigma_major,
        }


def backproject_points(points: np.ndarray, record: WarpRecord) -> np.ndarray:
    """Warped (cropped) frame points -> source frame via the inverse map."""
    try:
        Hinv = np.linalg.inv(record.map)
    except np.linalg.LinAlgError as e:
        raise SingularMap(str(e)) from e
    pts = np.atleast_2d(np.asarray(points, dtype=float)) + record.crop_offset
    return apply_homography(Hinv, pts)


def _mask_boundary_points(mask: np.ndarray) -> np.ndarray:
    """Coordinates (x, y) of mask boundary pixels plus bbox corners."""
    eroded = ndimage.binary_erosion(mask)
    boundary = mask & ~eroded
    ys, xs = np.nonzero(boundary)
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    corners = np.array(
        [
            [cols[0], rows[0]],
            [cols[-1], rows[0]],
            [cols[0], rows[-1]],
            [cols[-1], rows[-1]],
        ],
        dtype=float,
    )
    return np.concatenate([np.stack([xs, ys], axis=1).astype(float), corners])


def _blur_direction_and_sigma(H: np.ndarray, centroid: np.ndarray):
    """Compressed source direction and blur sigma from the map's tilt.

    For a homography the linearization at the mask centroid is used.
    The compressed axis is the right singular direction of the smaller
    singular value.
    """
    if abs(H[2, 0]) < 1e-15 and abs(H[2, 1]) < 1e-15:
        lin = H[:2, :2] / H[2, 2]
    else:
        x, y = centroid
        d = H[2, 0] * x + H[2, 1] * y + H[2, 2]
        a = H[:2, :2]
        num = H[:2, 2] + H[:2, :2] @ centroid
        lin = a / d - np.outer(num, H[2, :2]) / d**2
    _, s, Vt = np.linalg.svd(lin)
    t = s[0] / max(s[1], 1e-300)
    sigma = 0.0 if t <= 1.0 + 1e-9 else BLUR_CONSTANT * np.sqrt(t * t - 1.0)
    return Vt[1], float(sigma)  # row of V^T for sigma_min


def _bilinear_masked(image, maskf, xs, ys):
    """Bilinear sample with invalid neighbors dropped (renormalized).

    Returns (values, weight_sums); weight_sum 0 means fully invalid.
    """
    h, w = image.shape
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    vals = np.zeros(xs.shape)
    wsum = np.zeros(xs.shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            inb = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            xi_c = np.clip(xi, 0, w - 1)
            yi_c = np.clip(yi, 0, h - 1)
            wgt = wx * wy * maskf[yi_c, xi_c] * inb
            vals += wgt * image[yi_c, xi_c]
            wsum += wgt
    return vals, wsum


def warp_masked(image: np.ndarray, mask, map_) -> tuple:
    """Warp the masked region of ``image`` with an affine map or homography.

    Returns (warped float32 image, WarpRecord).  Pixels outside the
    mapped mask are zero; validity can be recovered by re-testing mask
    membership of the backprojected coordinates.
    """
    img = np.asarray(image, dtype=float)
    mask_arr = mask.mask if hasattr(mask, "mask") else np.asarray(mask, dtype=bool)
    if not mask_arr.any():
        raise EmptyMask("mask has no pixels")
    if mask_arr.shape != img.shape:
        raise EmptyMask(f"mask shape {mask_arr.shape} != image shape {img.shape}")
    H = as_homography(map_)
    if abs(np.linalg.det(H)) < 1e-12:
        raise SingularMap("map is not invertible")
    Hinv = np.linalg.inv(H)

    boundary = _mask_boundary_points(mask_arr)
    mapped = apply_homography(H, boundary)
    if not np.all(np.isfinite(mapped)):
        raise SingularMap("mask crosses the line at infinity under this map")
    lo = np.floor(mapped.min(axis=0))
    hi = np.ceil(mapped.max(axis=0))
    out_w = int(hi[0] - lo[0]) + 1
    out_h = int(hi[1] - lo[1]) + 1
    mask_area = int(np.count_nonzero(mask_arr))
    projective = abs(H[2, 0]) > 1e-15 or abs(H[2, 1]) > 1e-15
    if projective and out_w * out_h > OVERSIZE_FACTOR * mask_area:
        raise OversizeWarp(
            f"mapped bounding box {out_w}x{out_h} exceeds "
            f"{OVERSIZE_FACTOR:g}x the mask area {mask_area}"
        )
    crop_offset = lo.astype(float)

    ys_mask, xs_mask = np.nonzero(mask_arr)
    centroid = np.array([xs_mask.mean(), ys_mask.mean()])
    direction, sigma = _blur_direction_and_sigma(H, centroid)

    xg, yg = np.meshgrid(np.arange(out_w, dtype=float), np.arange(out_h, dtype=float))
    src = apply_homography(Hinv, np.stack([xg.ravel() + lo[0], yg.ravel() + lo[1]], axis=1))
    sx = src[:, 0]
    sy = src[:, 1]

    # validity from the center tap: nearest pixel must be inside the mask
    h_img, w_img = img.shape
    nx = np.clip(np.rint(sx).astype(int), 0, w_img - 1)
    ny = np.clip(np.rint(sy).astype(int), 0, h_img - 1)
    center_valid = (
        (sx >= -0.5) & (sx <= w_img - 0.5) & (sy >= -0.5) & (sy <= h_img - 0.5)
        & mask_arr[ny, nx]
    )

    maskf = mask_arr.astype(float)
    if sigma > 0:
        half = max(1, int(np.ceil(3.0 * sigma)))
        taps = np.arange(-half, half + 1, dtype=float)
        tap_w = np.exp(-0.5 * (taps / sigma) ** 2)
        tap_w /= tap_w.sum()
    else:
        taps = np.array([0.0])
        tap_w = np.array([1.0])

    # apply the directional blur on the source grid (cost scales with the
    # source area, not the usually larger warped area), then resample
    # with a single masked bilinear tap
    if len(taps) > 1:
        xg_s, yg_s = np.meshgrid(
            np.arange(w_img, dtype=float), np.arange(h_img, dtype=float)
        )
        acc_s = np.zeros(img.shape)
        accw_s = np.zeros(img.shape)
        for off, wgt in zip(taps, tap_w):
            vals, wsum = _bilinear_masked(
                img, maskf, xg_s + off * direction[0], yg_s + off * direction[1]
            )
            good = wsum > 1e-12
            acc_s[good] += wgt * vals[good] / wsum[good]
            accw_s[good] += wgt
        sample_img = np.where(accw_s > 1e-12, acc_s / np.maximum(accw_s, 1e-12), 0.0)
    else:
        sample_img = img
    vals, wsum = _bilinear_masked(sample_img, maskf, sx, sy)
    out = np.zeros(sx.shape)
    nz = wsum > 1e-12
    out[nz] = vals[nz] / wsum[nz]
    out[~center_valid] = 0.0
    warped = out.reshape(out_h, out_w).astype(np.float32)

    record = WarpRecord(
        map=H,
        crop_offset=crop_offset,
        warped_size=(out_w, out_h),
        source_mask=mask_arr,
        blur_sigma_major=sigma,
    )
    return warped, record


def warped_valid_mask(record: WarpRecord) -> np.ndarray:
    """Validity mask of a warped image (mapped source mask membership)."""
    out_w, out_h = record.warped_size
    xg, yg = np.meshgrid(np.arange(out_w, dtype=float), np.arange(out_h, dtype=float))
    src = backproject_points(np.stack([xg.ravel(), yg.ravel()], axis=1), record)
    h, w = record.source_mask.shape
    nx = np.clip(np.rint(src[:, 0]).astype(int), 0, w - 1)
    ny = np.clip(np.rint(src[:, 1]).astype(int), 0, h - 1)
    ok = (
        (src[:, 0] >= -0.5) & (src[:, 0] <= w - 0.5)
        & (src[:, 1] >= -0.5) & (src[:, 1] <= h - 0.5)
        & record.source_mask[ny, nx]
    )
    return ok.reshape(out_h, out_w)
