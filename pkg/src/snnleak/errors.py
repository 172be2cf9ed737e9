"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes, so keep the classes coarse.
"""


class SnnError(Exception):
    """Base class for all engine errors."""


class MalformedInputError(SnnError, ValueError):
    """Event data that violates a structural invariant (bad channel, bad order)."""


class EventFormatError(MalformedInputError):
    """A canonical event file that cannot be decoded.

    ``offset`` is the byte offset at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DomainError(SnnError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class StructuralError(SnnError, ValueError):
    """Shape or dimension mismatch between arrays, records and weights."""


class ConfigError(SnnError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class NumericError(SnnError, FloatingPointError):
    """Training diverged (non-finite loss or gradients)."""
