"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps :class:`ValidationError` subclasses to exit status 1 and
:class:`NumericsError` (plus anything unexpected) to exit status 2.
"""


class FattenError(Exception):
    """Base class for all package errors."""


class ValidationError(FattenError):
    """Bad input, configuration or file contents."""


class DimensionError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class RangeError(ValidationError):
    pass


class DegenerateBatchError(ValidationError):
    pass


class StateError(ValidationError):
    pass


class PrerequisiteError(ValidationError):
    """A pipeline stage was run before the stage it depends on."""


class FormatError(ValidationError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class NumericsError(FattenError):
    """Non-finite values appeared during training or evaluation."""
