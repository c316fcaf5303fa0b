"""Exception types raised across the package."""


class SinfError(ValueError):
    """Base class for invalid input or numerical failures."""


class LengthMismatchError(SinfError):
    pass


class DimensionMismatchError(SinfError):
    pass


class InvalidDataError(SinfError):
    """Non-finite or otherwise malformed numeric input."""


class StepTooLargeError(SinfError):
    """The Cayley system became singular; the caller should shrink the step."""


class DegenerateMarginalError(SinfError):
    """A 1D marginal has zero spread, so no monotone map can be fitted."""


class FormatError(SinfError):
    """A file on disk is malformed, truncated or of an unsupported version."""
