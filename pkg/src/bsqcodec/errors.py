"""Exception hierarchy shared by every codec stage."""


class CodecError(Exception):
    """Base class for all errors raised by bsqcodec."""


class ShapeError(CodecError, ValueError):
    """Array dimensions do not agree with what an operation needs."""


class DomainError(CodecError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateInputError(DomainError):
    """Input too close to zero to be placed on the unit sphere."""


class InvalidCodeError(DomainError):
    """A quantized code or token index is not a member of the implicit codebook."""


class FormatError(CodecError, ValueError):
    """A byte stream does not follow the expected layout."""


class TruncationError(FormatError):
    """A byte stream ended before all declared content was read."""
