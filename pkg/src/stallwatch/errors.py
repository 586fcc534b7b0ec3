"""Exception types shared across the package."""


class StallwatchError(Exception):
    """Base class for all package errors."""


class DimensionError(StallwatchError):
    """Tensor shapes do not line up for the requested operation."""


class ValidationError(StallwatchError):
    """An argument value is outside its documented domain."""


class ConfigError(StallwatchError):
    """A configuration (model spec, experiment plan, camera setup) is unusable."""


class TrainingError(StallwatchError):
    """Optimizer saw non-finite gradients."""


class DivergenceError(TrainingError):
    """Training loss became non-finite."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")


class NotFoundError(StallwatchError):
    """A registry lookup (lot, stall, camera) found nothing."""


class EmptyIndexError(StallwatchError):
    """A dataset scan matched no labeled images."""


class ImageLoadError(StallwatchError):
    """An image file could not be decoded."""

    def __init__(self, path, message: str = ""):
        self.path = str(path)
        super().__init__(message or f"cannot decode image: {self.path}")


class CropError(StallwatchError):
    """A stall bounding box does not intersect the camera frame."""


class ModelFormatError(StallwatchError):
    """Model file does not conform to the binary format."""


class BadMagicError(ModelFormatError):
    """Model file does not start with the expected magic bytes."""


class UnsupportedVersionError(ModelFormatError):
    """Model file declares a format version this build cannot read."""


class TruncatedFileError(ModelFormatError):
    """Model file ends before all declared content."""


class FetchError(StallwatchError):
    """Base class for camera snapshot retrieval failures."""


class FetchTimeoutError(FetchError):
    """Camera did not answer within the configured timeout."""


class FetchHTTPError(FetchError):
    """Camera answered with a non-2xx status."""

    def __init__(self, status: int, message: str = ""):
        self.status = status
        super().__init__(message or f"camera returned HTTP {status}")


class FetchDecodeError(FetchError):
    """Camera response body is not a decodable image."""
