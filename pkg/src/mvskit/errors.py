"""Exception types raised by the toolkit."""


class MvsError(Exception):
    """Base class for all toolkit errors."""


class BehindCamera(MvsError):
    """A 3D point lies on or behind the camera plane (camera-frame z <= eps)."""


class NonPositiveDepth(MvsError):
    """A depth value that must be strictly positive is not."""


class NotUnit(MvsError):
    """A vector expected to have unit length does not."""


class BadRange(MvsError):
    """An invalid numeric range, e.g. z_min > z_max or z_min <= 0."""


class InsufficientViews(MvsError):
    """Fewer views than the operation requires."""


class ResolutionMismatch(MvsError):
    """Two maps that must share a resolution do not."""


class NoSources(MvsError):
    """An operation requiring at least one source view got none."""


class ShapeMismatch(MvsError):
    """Array shapes are incompatible."""


class SingleClass(MvsError):
    """A binary-classification metric got labels of only one class."""


class NonFiniteInput(MvsError):
    """An input array contains NaN or infinity where finite values are required."""


class EmptyCloud(MvsError):
    """A point cloud that must be non-empty is empty."""


class OutOfRange(MvsError):
    """A scalar argument lies outside its documented domain."""


class MissingMaps(MvsError):
    """A view lacks the depth/normal maps required by the operation."""


class MissingImage(MvsError):
    """A camera entry references an image file that does not exist."""


class ParseError(MvsError):
    """A camera/pose file could not be parsed.

    Attributes:
        path: File being parsed.
        line: 1-based line number of the offending line (0 if unknown).
    """

    def __init__(self, message, path="", line=0):
        super().__init__(message)
        self.path = str(path)
        self.line = line

    def __str__(self):
        base = super().__str__()
        if self.path:
            return f"{self.path}:{self.line}: {base}"
        return base


class IoFailure(MvsError):
    """Reading or writing an exchange file failed."""


class ConfigError(MvsError):
    """Inconsistent or invalid pipeline configuration."""
