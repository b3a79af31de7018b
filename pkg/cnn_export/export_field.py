"""Export a per-image shape field or depth map from a CNN.

Usage:
    python3 -m cnn_export.export_field --image IMG --kind shape_field \
        --out out.shpf [--cell-size 4] [--convention 0|1] [--model m.pt]
    python3 -m cnn_export.export_field --image IMG --kind depth \
        --out out.dpth [--model m.pt] [--fx F --fy F --cx C --cy C]

Exit codes: 0 success, 2 unreadable input image or bad arguments,
3 model unavailable or model output rejected.
"""

import argparse
import sys

import numpy as np
from PIL import Image

from . import formats, models
from .errors import ImageUnreadable, ModelUnavailable

EXIT_INPUT = 2
EXIT_MODEL = 3


def load_image(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    except OSError as e:
        raise ImageUnreadable(f"cannot read image {path}: {e}") from e
    if arr.ndim != 2 or arr.size == 0:
        raise ImageUnreadable(f"image {path} decoded to shape {arr.shape}")
    return arr


def export_shape_field(image, out_path, cell_size, convention, model):
    import torch

    h, w = image.shape
    with torch.no_grad():
        shapes = model(torch.from_numpy(image).view(1, 1, h, w), cell_size)
    shapes = shapes.cpu().numpy().astype(np.float32)
    hc, wc = formats.cell_grid(w, h, cell_size)
    if shapes.shape != (hc, wc, 2, 2):
        raise ModelUnavailable(
            f"shape model returned {shapes.shape}, expected {(hc, wc, 2, 2)}"
        )
    formats.write_shape_field(shapes, out_path, w, h, cell_size, convention)


def export_depth(image, out_path, model, intrinsics):
    import torch

    h, w = image.shape
    with torch.no_grad():
        depth = model(torch.from_numpy(image).view(1, 1, h, w))
    depth = depth.cpu().numpy().astype(np.float32)
    if depth.shape != (h, w) or not np.all(np.isfinite(depth)):
        raise ModelUnavailable(
            f"depth model returned {depth.shape}, expected {(h, w)} finite"
        )
    formats.write_depth_map(depth, out_path, intrinsics)


def build_parser():
    p = argparse.ArgumentParser(
        prog="cnn_export.export_field", description=__doc__.splitlines()[0]
    )
    p.add_argument("--image", required=True, help="input image path")
    p.add_argument("--kind", required=True, choices=("shape_field", "depth"))
    p.add_argument("--out", required=True, help="output container path")
    p.add_argument("--cell-size", type=int, default=4)
    p.add_argument("--convention", type=int, default=0, choices=(0, 1))
    p.add_argument("--model", default=None, help="TorchScript model path")
    p.add_argument("--fx", type=float, default=None)
    p.add_argument("--fy", type=float, default=None)
    p.add_argument("--cx", type=float, default=None)
    p.add_argument("--cy", type=float, default=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.cell_size < 1:
        print("error: --cell-size must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        image = load_image(args.image)
    except ImageUnreadable as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    try:
        model = (
            models.load_model(args.model)
            if args.model
            else models.default_model(args.kind)
        )
        if args.kind == "shape_field":
            export_shape_field(
                image, args.out, args.cell_size, args.convention, model
            )
        else:
            h, w = image.shape
            intrinsics = {
                "fx": args.fx if args.fx is not None else float(max(w, h)),
                "fy": args.fy if args.fy is not None else float(max(w, h)),
                "cx": args.cx if args.cx is not None else (w - 1) / 2.0,
                "cy": args.cy if args.cy is not None else (h - 1) / 2.0,
            }
            export_depth(image, args.out, model, intrinsics)
    except ModelUnavailable as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    return 0


if __name__ == "__main__":
    sys.exit(main())
