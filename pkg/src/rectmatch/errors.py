"""Exception types shared across the toolkit."""


class RectmatchError(Exception):
    """Base class for all toolkit errors."""


# geometry
class NonPositiveDeterminant(RectmatchError):
    pass


class Degenerate(RectmatchError):
    pass


# covering
class EmptyShapeSet(RectmatchError):
    pass


class InvalidParameter(RectmatchError):
    pass


# shape field / file formats
class FormatError(RectmatchError):
    pass


class DimensionMismatch(RectmatchError):
    pass


class NonPositiveDetShape(RectmatchError):
    pass


class ImageTooSmall(RectmatchError):
    pass


class LabelMismatch(RectmatchError):
    pass


# depth planes
class TooManyClusters(RectmatchError):
    pass


class NormalFacesAway(RectmatchError):
    pass


# warping
class SingularMap(RectmatchError):
    pass


class EmptyMask(RectmatchError):
    pass


class OversizeWarp(RectmatchError):
    pass


# robust estimation
class InsufficientMatches(RectmatchError):
    pass


class DegenerateConfiguration(RectmatchError):
    pass


class NotARotation(RectmatchError):
    pass


class EmptyVisibleRegion(RectmatchError):
    pass


# harness
class MissingAuxInput(RectmatchError):
    pass


class ManifestError(RectmatchError):
    pass


class InvalidSpec(RectmatchError):
    pass


class StageError(RectmatchError):
    """Wraps an error raised inside a pipeline stage with the stage name."""

    def __init__(self, stage, original):
        super().__init__(f"stage '{stage}' failed: {original}")
        self.stage = stage
        self.original = original
