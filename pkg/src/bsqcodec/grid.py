"""Images and token grids as passed between codec stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidCodeError, ShapeError

PIXEL_MIN = -0.5
PIXEL_MAX = 0.5


def as_image(pixels) -> np.ndarray:
    """Validate an H x W x 3 float image and clamp it to [-0.5, 0.5]."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("image contains non-finite values")
    return np.clip(arr, PIXEL_MIN, PIXEL_MAX)


def image_from_bytes(u8: np.ndarray) -> np.ndarray:
    return np.asarray(u8, dtype=np.float64) / 255.0 - 0.5


def image_to_bytes(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`image_from_bytes`, rounding to the nearest level."""
    return np.clip(np.round((np.asarray(img) + 0.5) * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class TokenGrid:
    """h x w token indices, each in [0, 2**bits)."""

    tokens: np.ndarray
    bits: int

    def __post_init__(self):
        if not 1 <= self.bits <= 64:
            raise DomainError(f"bits must be in [1, 64], got {self.bits}")
        try:
            toks = np.asarray(self.tokens)
            if toks.dtype.kind == "i" and np.any(toks < 0):
                raise InvalidCodeError("negative token")
            toks = toks.astype(np.uint64)
        except OverflowError as exc:
            raise InvalidCodeError(f"token outside [0, 2^{self.bits})") from exc
        if toks.ndim != 2:
            raise ShapeError(f"token grid must be 2-D, got shape {toks.shape}")
        if self.bits < 64 and np.any(toks >> np.uint64(self.bits)):
            raise InvalidCodeError(f"token outside [0, 2^{self.bits})")
        toks.setflags(write=False)
        object.__setattr__(self, "tokens", toks)

    @property
    def shape(self) -> tuple[int, int]:
        return self.tokens.shape

    def flat(self) -> list[int]:
        return [int(t) for t in self.tokens.reshape(-1)]

    def __eq__(self, other):
        if not isinstance(other, TokenGrid):
            return NotImplemented
        return self.bits == other.bits and np.array_equal(self.tokens, other.tokens)

    def __repr__(self):
        return f"TokenGrid(shape={self.shape}, bits={self.bits})"
