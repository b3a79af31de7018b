"""Dense and sparse affine-shape fields, their binary container formats,
and a classical structure-tensor stand-in estimator.

SHAPEFIELD container (bit-exact): magic "SHPF", u32 version=1,
u32 image_width, u32 image_height, u32 cell_size, u8 convention
(0 = rectifying, 1 = shape-to-be-inverted), then width_cells *
height_cells little-endian float32 quadruples (a11, a12, a21, a22),
row-major.  The same container with magic "DPTH" holds float32
per-pixel depths (meters); its intrinsics live in a JSON sidecar.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core_geometry import AffineMap, TiltPoint, tilt_coords
from .covering import UNASSIGNED
from .errors import (
    DimensionMismatch,
    FormatError,
    ImageTooSmall,
    LabelMismatch,
    NonPositiveDetShape,
)

MAGIC_SHAPE = b"SHPF"
MAGIC_DEPTH = b"DPTH"
CONVENTION_RECTIFYING = 0
CONVENTION_INVERTED = 1


@dataclass(frozen=True)
class DenseShapeField:
    """Grid of per-cell 2x2 rectifying shapes, one per cell_size block.

    ``shapes`` has shape (height_cells, width_cells, 2, 2), float32, and
    stores the rectifying convention (apply the matrix to normalize).
    """

    shapes: np.ndarray
    cell_size: int
    image_width: int
    image_height: int

    def __post_init__(self):
        shapes = np.ascontiguousarray(self.shapes, dtype=np.float32)
        hc = -(-self.image_height // self.cell_size)
        wc = -(-self.image_width // self.cell_size)
        if shapes.shape != (hc, wc, 2, 2):
            raise DimensionMismatch(
                f"shapes grid {shapes.shape} does not match "
                f"ceil({self.image_height}/{self.cell_size}) x "
                f"ceil({self.image_width}/{self.cell_size})"
            )
        if not np.all(np.isfinite(shapes)):
            raise NonPositiveDetShape("non-finite shape entries")
        dets = (
            shapes[..., 0, 0] * shapes[..., 1, 1]
            - shapes[..., 0, 1] * shapes[..., 1, 0]
        )
        if np.any(dets <= 0):
            bad = np.argwhere(dets <= 0)[0]
            raise NonPositiveDetShape(f"cell {tuple(bad)} has det <= 0")
        object.__setattr__(self, "shapes", shapes)

    @property
    def height_cells(self) -> int:
        return self.shapes.shape[0]

    @property
    def width_cells(self) -> int:
        return self.shapes.shape[1]

    @classmethod
    def identity(cls, image_width, image_height, cell_size=4) -> "DenseShapeField":
        hc = -(-image_height // cell_size)
        wc = -(-image_width // cell_size)
        shapes = np.broadcast_to(np.eye(2, dtype=np.float32), (hc, wc, 2, 2)).copy()
        return cls(shapes, cell_size, image_width, image_height)


@dataclass(frozen=True)
class SparseShapes:
    """Per-keypoint shapes: list of (position, 2x2 rectifying matrix)."""

    entries: list


def save_shape_field(field: DenseShapeField, path, convention=CONVENTION_RECTIFYING):
    data = field.shapes
    if convention == CONVENTION_INVERTED:
        data = np.linalg.inv(data.astype(np.float64)).astype(np.float32)
    with open(path, "wb") as f:
        f.write(MAGIC_SHAPE)
        f.write(
            struct.pack(
                "<IIIIB",
                1,
                field.image_width,
                field.image_height,
                field.cell_size,
                convention,
            )
        )
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_container(path, magic):
    with open(path, "rb") as f:
        got = f.read(4)
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}")
        header = f.read(17)
        if len(header) != 17:
            raise FormatError("truncated header")
        version, width, height, cell_size, convention = struct.unpack("<IIIIB", header)
        if version != 1:
            raise FormatError(f"unsupported version {version}")
        payload = f.read()
    return width, height, cell_size, convention, payload


def load_shape_field(path) -> DenseShapeField:
    width, height, cell_size, convention, payload = _read_container(path, MAGIC_SHAPE)
    if width < 1 or height < 1 or cell_size < 1:
        raise DimensionMismatch(
            f"degenerate dimensions {width}x{height}, cell_size {cell_size}"
        )
    hc = -(-height // cell_size)
    wc = -(-width // cell_size)
    expected = hc * wc * 4 * 4
    if len(payload) != expected:
        raise DimensionMismatch(
            f"payload {len(payload)} bytes, expected {expected} for {hc}x{wc} cells"
        )
    shapes = np.frombuffer(payload, dtype="<f4").reshape(hc, wc, 2, 2).copy()
    if convention == CONVENTION_INVERTED:
        dets = (
            shapes[..., 0, 0] * shapes[..., 1, 1]
            - shapes[..., 0, 1] * shapes[..., 1, 0]
        )
        if np.any(~np.isfinite(dets)) or np.any(dets <= 0):
            bad = np.argwhere(~(dets > 0))[0]
            raise NonPositiveDetShape(f"cell {tuple(bad)} has det <= 0")
        shapes = np.linalg.inv(shapes.astype(np.float64)).astype(np.float32)
    elif convention != CONVENTION_RECTIFYING:
        raise FormatError(f"unknown convention flag {convention}")
    return DenseShapeField(shapes, cell_size, width, height)


def save_depth_map(depth: np.ndarray, path, intrinsics=None):
    """Write a DPTH container; invalid depths should be 0."""
    depth = np.ascontiguousarray(depth, dtype="<f4")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(MAGIC_DEPTH)
        f.write(struct.pack("<IIIIB", 1, w, h, 1, 0))
        f.write(depth.tobytes())
    if intrinsics is not None:
        with open(str(path) + ".json", "w") as f:
            json.dump(
                {
                    "fx": intrinsics.fx,
                    "fy": intrinsics.fy,
                    "cx": intrinsics.cx,
                    "cy": intrinsics.cy,
                },
                f,
            )


def load_depth_map(path) -> np.ndarray:
    width, height, _, _, payload = _read_container(path, MAGIC_DEPTH)
    if width < 1 or height < 1:
        raise DimensionMismatch(f"degenerate dimensions {width}x{height}")
    expected = width * height * 4
    if len(payload) != expected:
        raise DimensionMismatch(f"payload {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(height, width).copy()


def _inv_sqrt_2x2_spd(mats: np.ndarray) -> np.ndarray:
    """Inverse matrix square root of a batch of symmetric positive 2x2s."""
    w, v = np.linalg.eigh(mats)
    w = np.maximum(w, 1e-30)
    inv_sqrt_w = 1.0 / np.sqrt(w)
    return np.einsum("...ij,...j,...kj->...ik", v, inv_sqrt_w, v)


def estimate_shape_field_structure_tensor(
    image: np.ndarray, cell_size: int = 4, window_sigma: float | None = None
) -> DenseShapeField:
    """Classical stand-in for a dense shape CNN.

    Per cell: the Gaussian-windowed second-moment matrix of the image
    gradients around the cell center, regularized by eps*I with
    eps = 1e-4 * mean trace, then mapped to its inverse matrix square
    root and normalized to det = 1 (affine adaptation convention: the
    stored matrix is the rectifying map).
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ImageTooSmall("expected a grayscale image")
    h, w = img.shape
    if min(h, w) < cell_size:
        raise ImageTooSmall(f"min dimension {min(h, w)} < cell_size {cell_size}")
    if window_sigma is None:
        window_sigma = 2.0 * cell_size
    gy, gx = np.gradient(img)
    jxx = ndimage.gaussian_filter(gx * gx, window_sigma, mode="nearest")
    jxy = ndimage.gaussian_filter(gx * gy, window_sigma, mode="nearest")
    jyy = ndimage.gaussian_filter(gy * gy, window_sigma, mode="nearest")

    hc = -(-h // cell_size)
    wc = -(-w // cell_size)
    cy = np.minimum(np.arange(hc) * cell_size + cell_size // 2, h - 1)
    cx = np.minimum(np.arange(wc) * cell_size + cell_size // 2, w - 1)
    yy, xx = np.meshgrid(cy, cx, indexing="ij")
    mats = np.empty((hc, wc, 2, 2))
    mats[..., 0, 0] = jxx[yy, xx]
    mats[..., 0, 1] = mats[..., 1, 0] = jxy[yy, xx]
    mats[..., 1, 1] = jyy[yy, xx]
    eps = 1e-4 * float(np.mean(mats[..., 0, 0] + mats[..., 1, 1])) + 1e-30
    mats[..., 0, 0] += eps
    mats[..., 1, 1] += eps
    shapes = _inv_sqrt_2x2_spd(mats)
    dets = (
        shapes[..., 0, 0] * shapes[..., 1, 1] - shapes[..., 0, 1] * shapes[..., 1, 0]
    )
    shapes /= np.sqrt(dets)[..., None, None]
    return DenseShapeField(shapes.astype(np.float32), cell_size, w, h)


def field_to_tilt_points(field: DenseShapeField) -> list:
    """One (grid_index, TiltPoint) per cell, row-major."""
    out = []
    idx = 0
    for r in range(field.height_cells):
        for c in range(field.width_cells):
            out.append(
                (idx, tilt_coords(AffineMap(field.shapes[r, c].astype(float))))
            )
            idx += 1
    return out


def sample_field(field: DenseShapeField, positions: np.ndarray) -> np.ndarray:
    """Shape matrix of the cell containing each (x, y) pixel position."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    c = np.clip((pos[:, 0] // field.cell_size).astype(int), 0, field.width_cells - 1)
    r = np.clip((pos[:, 1] // field.cell_size).astype(int), 0, field.height_cells - 1)
    return field.shapes[r, c].astype(float)


def masks_from_labels(field: DenseShapeField, labels: np.ndarray) -> list:
    """Expand per-cell labels to disjoint pixel masks, one per label value.

    Returns a list of (label, bool mask) in ascending label order with
    the UNASSIGNED cells last (identity mask), omitted when empty.
    Masks are clipped to the true image size, so they partition the
    image exactly.
    """
    n_cells = field.height_cells * field.width_cells
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (n_cells,):
        raise LabelMismatch(f"expected {n_cells} labels, got {labels.shape}")
    grid = labels.reshape(field.height_cells, field.width_cells)
    full = np.repeat(np.repeat(grid, field.cell_size, 0), field.cell_size, 1)
    full = full[: field.image_height, : field.image_width]
    out = []
    for lab in sorted(set(labels.tolist()) - {UNASSIGNED}):
        out.append((lab, full == lab))
    if np.any(full == UNASSIGNED):
        out.append((UNASSIGNED, full == UNASSIGNED))
    return out
