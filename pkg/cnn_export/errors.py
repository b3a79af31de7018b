class ExportError(Exception):
    """Base class for export failures."""


class ImageUnreadable(ExportError):
    """The input image file is missing or cannot be decoded."""


class ModelUnavailable(ExportError):
    """The requested model file is missing or is not a TorchScript module."""
