"""File helpers: atomic writes and binary PPM (P6) images."""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .errors import FormatError, TruncationError


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temp file and rename.

    Readers never observe a partially written file; on failure the temp file
    is removed and ``path`` is left untouched.
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _ppm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Split the first ``count`` whitespace-separated header fields, skipping comments."""
    fields = []
    pos = 0
    n = len(buf)
    while len(fields) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise TruncationError("PPM header ended early")
        fields.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return fields, pos + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    """Parse a binary PPM (P6, maxval 255) into an H x W x 3 uint8 array."""
    fields, offset = _ppm_tokens(buf, 4)
    if fields[0] != b"P6":
        raise FormatError(f"not a binary PPM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError("non-numeric PPM header field") from exc
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise FormatError(f"bad PPM dimensions {width}x{height}")
    need = width * height * 3
    raster = buf[offset : offset + need]
    if len(raster) < need:
        raise TruncationError(f"PPM raster has {len(raster)} of {need} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(pixels: np.ndarray) -> bytes:
    arr = np.asarray(pixels, dtype=np.uint8)
    h, w, _ = arr.shape
    return b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes()


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_ppm(path: str | os.PathLike, pixels: np.ndarray) -> None:
    atomic_write(path, encode_ppm(pixels))
