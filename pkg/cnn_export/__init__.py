"""Standalone CNN-to-container export bridge.

Runs a TorchScript model over a single image and writes the results in
the binary shape-field (SHPF) / depth-map (DPTH) container formats so
they can be consumed as auxiliary inputs by the matching toolkit.  This
package deliberately has no dependency on that toolkit; it talks to it
only through the file formats.
"""

from .errors import ExportError, ImageUnreadable, ModelUnavailable

__all__ = ["ExportError", "ImageUnreadable", "ModelUnavailable"]
