"""Exception types raised across the package."""


class SmfvoError(Exception):
    """Base class for all package-specific errors."""


class PointBehindCamera(SmfvoError):
    """Projection is undefined for the given point under the camera model."""


class NoConvergence(SmfvoError):
    """Iterative distortion inversion failed to converge."""


class DegenerateSystem(SmfvoError):
    """Linear motion system is too ill-conditioned to solve reliably."""


class InsufficientObservations(SmfvoError):
    """Not enough observations for the requested optimization."""


class ImageSizeMismatch(SmfvoError):
    """Input image dimensions do not match the calibration."""


class NonMonotonicTimestamp(SmfvoError):
    """Frame timestamps must be strictly increasing."""


class MissingCalibration(SmfvoError):
    """Dataset directory has no readable calibration file."""


class EmptySequence(SmfvoError):
    """Dataset contains no usable stereo frames."""


class UnpairableStreams(SmfvoError):
    """Left/right image streams cannot be paired by timestamp."""


class ParseError(SmfvoError):
    """A text file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class NoOverlap(SmfvoError):
    """Two trajectories share no associable timestamps."""
