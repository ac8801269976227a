"""Exception hierarchy.

Geometric failures derive from :class:`GeometryError`, file-format problems
from :class:`FormatError`; both are ``ValueError`` subclasses so callers that
only care about "bad input" can catch that.
"""


class GeometryError(ValueError):
    pass


class DegenerateBaseline(GeometryError):
    """Two cameras share (numerically) the same center."""


class DegenerateLine(GeometryError):
    """Epipolar line with vanishing normal, i.e. the pixel is the epipole."""


class PointAtCameraPlane(GeometryError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class NumericBlowup(GeometryError):
    """Source and target rays are (nearly) parallel."""


class DegenerateGeometry(GeometryError):
    pass


class OutOfBoundsPixel(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class FormatError(ValueError):
    pass


class BadMagic(FormatError):
    pass


class TruncatedStream(FormatError):
    pass


class NonFiniteDimensions(FormatError):
    pass


class NoCandidates(ValueError):
    pass


class MissingFlow(KeyError):
    pass


class InconsistentScene(ValueError):
    pass


class BadPreset(ValueError):
    pass


class NoOverlap(ValueError):
    pass


class EmptyCloud(ValueError):
    pass


class IoFailure(OSError):
    pass
