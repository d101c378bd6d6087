"""Exception hierarchy shared by every sargazo module."""


class SargazoError(Exception):
    """Base class for all library errors."""


class ShapeError(SargazoError, ValueError):
    """Tensor shapes are inconsistent with an operation."""


class ConfigError(SargazoError, ValueError):
    """A configuration value is invalid or incomplete."""


class StateError(SargazoError, RuntimeError):
    """An object was used in the wrong state (e.g. backward without a forward cache)."""


class LabelError(SargazoError, ValueError):
    """A class label is outside the valid range or unknown."""


class InputError(SargazoError, ValueError):
    """Evaluation inputs are degenerate or inconsistent."""


class ParseError(SargazoError, ValueError):
    """A manifest line could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DecodeError(SargazoError, ValueError):
    """An image file is not a valid binary PPM/PGM."""


class CheckpointError(SargazoError, ValueError):
    """A checkpoint file is malformed, truncated or corrupted."""


class CompatibilityError(SargazoError, ValueError):
    """A checkpoint does not match the target architecture."""


class DivergenceError(SargazoError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
