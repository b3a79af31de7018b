"""Writers for the SHPF / DPTH binary containers.

Layout (little endian), shared by both containers:

    bytes 0-3   magic, b"SHPF" or b"DPTH"
    bytes 4-20  struct "<IIIIB": version (1), image width, image height,
                cell size, convention flag
    bytes 21-   float32 payload, row major

SHPF payload is a (height_cells, width_cells, 2, 2) grid of per-cell
matrices, where cells tile the image in cell_size blocks (ceil
division).  Convention 0 stores rectifying matrices directly;
convention 1 stores their inverses.  DPTH payload is a (height, width)
depth image with cell size 1 and convention 0; pinhole intrinsics go in
a JSON sidecar at path + ".json".
"""

import json
import struct

import numpy as np

MAGIC_SHAPE = b"SHPF"
MAGIC_DEPTH = b"DPTH"
VERSION = 1
CONVENTION_RECTIFYING = 0
CONVENTION_INVERTED = 1


def _header(magic, width, height, cell_size, convention):
    return magic + struct.pack("<IIIIB", VERSION, width, height, cell_size, convention)


def cell_grid(image_width, image_height, cell_size):
    """(height_cells, width_cells) via ceil division."""
    return -(-image_height // cell_size), -(-image_width // cell_size)


def write_shape_field(shapes, path, image_width, image_height, cell_size,
                      convention=CONVENTION_RECTIFYING):
    """Write a dense shape field.

    ``shapes`` is (height_cells, width_cells, 2, 2) in the rectifying
    convention with positive determinants; convention 1 inverts each
    cell before serialization.
    """
    shapes = np.ascontiguousarray(shapes, dtype=np.float32)
    hc, wc = cell_grid(image_width, image_height, cell_size)
    if shapes.shape != (hc, wc, 2, 2):
        raise ValueError(
            f"shape grid {shapes.shape} does not match {hc}x{wc} cells"
        )
    dets = (
        shapes[..., 0, 0] * shapes[..., 1, 1]
        - shapes[..., 0, 1] * shapes[..., 1, 0]
    )
    if not np.all(np.isfinite(shapes)) or np.any(dets <= 0):
        raise ValueError("shape cells must be finite with positive determinant")
    data = shapes
    if convention == CONVENTION_INVERTED:
        data = np.linalg.inv(shapes.astype(np.float64)).astype(np.float32)
    elif convention != CONVENTION_RECTIFYING:
        raise ValueError(f"unknown convention {convention}")
    with open(path, "wb") as f:
        f.write(_header(MAGIC_SHAPE, image_width, image_height, cell_size, convention))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def write_depth_map(depth, path, intrinsics):
    """Write a DPTH container plus its intrinsics JSON sidecar.

    ``intrinsics`` is a dict with fx, fy, cx, cy.
    """
    depth = np.ascontiguousarray(depth, dtype="<f4")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(_header(MAGIC_DEPTH, w, h, 1, 0))
        f.write(depth.tobytes())
    with open(str(path) + ".json", "w") as f:
        json.dump(
            {k: float(intrinsics[k]) for k in ("fx", "fy", "cx", "cy")}, f
        )
