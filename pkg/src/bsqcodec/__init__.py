"""Learned image codec built on binary spherical quantization of patch latents."""

from .errors import (
    CodecError,
    DegenerateInputError,
    DomainError,
    FormatError,
    InvalidCodeError,
    ShapeError,
    TruncationError,
)
from .grid import TokenGrid

__version__ = "0.1.0"

__all__ = [
    "CodecError",
    "DegenerateInputError",
    "DomainError",
    "FormatError",
    "InvalidCodeError",
    "ShapeError",
    "TokenGrid",
    "TruncationError",
]
