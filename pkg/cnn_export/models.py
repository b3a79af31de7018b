"""TorchScript model interfaces and built-in defaults.

Two model kinds are supported:

* shape models: ``forward(image, cell_size) -> (hc, wc, 2, 2)`` tensor
  of symmetric positive-definite, determinant-1 rectifying matrices,
  where ``image`` is a (1, 1, H, W) float tensor in [0, 1];
* depth models: ``forward(image) -> (H, W)`` tensor of positive depths.

``--model`` accepts any TorchScript module honoring the matching
interface; without it a deterministic built-in is used.  The built-in
shape model is a fixed-weight structure-tensor network (Scharr
gradients, per-cell average pooling, closed-form 2x2 SPD square root),
the built-in depth model a smoothed-intensity parallax proxy.
"""

import os

from .errors import ModelUnavailable

try:
    import torch
    import torch.nn.functional as F
except ImportError:  # pragma: no cover - torch is an install requirement
    torch = None


if torch is not None:

    class StructureTensorShapes(torch.nn.Module):
        """Fixed-weight per-cell shape estimator."""

        def __init__(self):
            super().__init__()
            scharr = torch.tensor(
                [[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]]
            ) / 32.0
            self.register_buffer("kx", scharr.view(1, 1, 3, 3))
            self.register_buffer("ky", scharr.t().contiguous().view(1, 1, 3, 3))

        def forward(self, image: torch.Tensor, cell_size: int) -> torch.Tensor:
            img = F.pad(image, (1, 1, 1, 1), mode="replicate")
            gx = F.conv2d(img, self.kx)
            gy = F.conv2d(img, self.ky)
            j11 = F.avg_pool2d(gx * gx, cell_size, ceil_mode=True)
            j22 = F.avg_pool2d(gy * gy, cell_size, ceil_mode=True)
            j12 = F.avg_pool2d(gx * gy, cell_size, ceil_mode=True)
            # regularize toward isotropy so flat cells stay near identity
            reg = 0.25 * (j11 + j22).mean() + 1e-6
            a = j11[0, 0] + reg
            d = j22[0, 0] + reg
            b = j12[0, 0]
            # normalize to determinant 1, then closed-form SPD square root
            det = torch.clamp(a * d - b * b, min=1e-12)
            s = torch.rsqrt(det)
            a = a * s
            d = d * s
            b = b * s
            trace = a + d
            denom = torch.rsqrt(torch.clamp(trace + 2.0, min=1e-12))
            sa = (a + 1.0) * denom
            sd = (d + 1.0) * denom
            sb = b * denom
            return torch.stack(
                [torch.stack([sa, sb], dim=-1), torch.stack([sb, sd], dim=-1)],
                dim=-2,
            )

    class SmoothedIntensityDepth(torch.nn.Module):
        """Monotone intensity-to-depth proxy with a fixed blur."""

        def __init__(self):
            super().__init__()
            g = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
            self.register_buffer("gx", g.view(1, 1, 1, 5))
            self.register_buffer("gy", g.view(1, 1, 5, 1))

        def forward(self, image: torch.Tensor) -> torch.Tensor:
            img = F.pad(image, (2, 2, 0, 0), mode="replicate")
            img = F.conv2d(img, self.gx)
            img = F.pad(img, (0, 0, 2, 2), mode="replicate")
            img = F.conv2d(img, self.gy)
            return 2.0 + 6.0 * img[0, 0]


def _require_torch():
    if torch is None:
        raise ModelUnavailable("torch is not installed")


def default_model(kind):
    _require_torch()
    if kind == "shape_field":
        return torch.jit.script(StructureTensorShapes())
    return torch.jit.script(SmoothedIntensityDepth())


def load_model(path):
    _require_torch()
    if not os.path.exists(path):
        raise ModelUnavailable(f"model file not found: {path}")
    try:
        return torch.jit.load(path, map_location="cpu")
    except Exception as e:
        raise ModelUnavailable(f"not a loadable TorchScript module: {e}") from e


def save_default_model(kind, path):
    """Serialize a built-in model as a TorchScript file (fixture helper)."""
    default_model(kind).save(str(path))
