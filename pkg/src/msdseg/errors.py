"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ArgumentError(ValueError):
    """An argument is outside the operation's domain."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class ConfigError(ValueError):
    """A configuration document is malformed or inconsistent."""


class ParseError(ValueError):
    """A file failed to parse; `offset` is the byte position when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SamplingError(RuntimeError):
    """Episode sampling could not satisfy its preconditions."""


class ProtocolError(RuntimeError):
    """Train/test protocol violation (e.g. class overlap between splits)."""
