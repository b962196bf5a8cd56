"""Exception hierarchy shared across the package.

The CLI maps each family onto a distinct process exit code.
"""


class DentalMimError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(DentalMimError, ValueError):
    pass


class ValidationError(DentalMimError, ValueError):
    """Input data violates a documented invariant."""

    def __init__(self, message, image_id=None):
        if image_id is not None:
            message = f"image_id={image_id!r}: {message}"
        super().__init__(message)
        self.image_id = image_id


class ParseError(DentalMimError, ValueError):
    pass


class InvalidFdi(ValidationError):
    pass


class OutOfRange(DentalMimError, IndexError):
    pass


class ShapeError(DentalMimError, ValueError):
    pass


class OddGrid(ShapeError):
    pass


class EmptyMask(DentalMimError, ValueError):
    """A loss was requested over a region containing no pixels."""


class NonFinite(DentalMimError, FloatingPointError):
    pass


class CheckpointMismatch(DentalMimError):
    pass


class CategoryMismatch(DentalMimError, ValueError):
    pass


class LeakageError(DentalMimError):
    """An image from the held-out test fold reached a training batch."""
