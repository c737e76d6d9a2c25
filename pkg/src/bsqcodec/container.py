"""The ``GANC`` compressed-image container.

Byte layout, all integers little-endian::

    header (16 bytes)
        magic "GANC" | u8 version | u16 H | u16 W | u8 patch | u8 L
        | u8 coding_mode | u32 payload_len
    payload (payload_len bytes)
        mode 0: tokens packed at L bits each, least significant bit first
        mode 1: arithmetic-coded stream (see ``entropy.CodedStream``)
    fallback
        u32 jpeg_len | jpeg_len bytes of baseline JPEG (jpeg_len = 0: none)
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import entropy
from .errors import DomainError, FormatError, ShapeError, TruncationError
from .grid import TokenGrid, as_image

log = logging.getLogger(__name__)

MAGIC = b"GANC"
VERSION = 1
MODE_RAW = 0
MODE_ARITH = 1

_HEADER = struct.Struct("<4sBHHBBBI")
HEADER_SIZE = _HEADER.size
JPEG_QUALITIES = (1, 5, 10, 15)
NEURAL_WEIGHT = 0.7
BASE_WEIGHT = 0.3


@dataclass(frozen=True)
class ContainerHeader:
    height: int
    width: int
    patch: int
    bits: int
    coding_mode: int
    payload_len: int
    version: int = VERSION

    def __post_init__(self):
        if not (0 < self.height <= 0xFFFF and 0 < self.width <= 0xFFFF):
            raise FormatError(f"image size {self.height}x{self.width} does not fit in u16")
        if not 1 <= self.patch <= 0xFF:
            raise FormatError(f"patch size {self.patch} does not fit in u8")
        if self.height % self.patch or self.width % self.patch:
            raise FormatError(
                f"image size {self.height}x{self.width} not divisible by patch {self.patch}"
            )
        if not 1 <= self.bits <= 64:
            raise FormatError(f"bits per token must be in [1, 64], got {self.bits}")
        if self.coding_mode not in (MODE_RAW, MODE_ARITH):
            raise FormatError(f"unknown coding mode {self.coding_mode}")
        if not 0 <= self.payload_len <= 0xFFFFFFFF:
            raise FormatError(f"payload length {self.payload_len} does not fit in u32")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC, self.version, self.height, self.width, self.patch,
            self.bits, self.coding_mode, self.payload_len,
        )

    @classmethod
    def unpack(cls, buf: bytes) -> "ContainerHeader":
        if len(buf) < 4 or buf[:4] != MAGIC[: len(buf[:4])]:
            raise FormatError("not a GANC container (bad magic)")
        if len(buf) < HEADER_SIZE:
            raise TruncationError(f"container header needs {HEADER_SIZE} bytes, got {len(buf)}")
        magic, version, H, W, patch, bits, mode, plen = _HEADER.unpack_from(buf)
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        return cls(H, W, patch, bits, mode, plen, version)


def pack_tokens(tokens: list[int], bits: int) -> bytes:
    """Concatenate tokens at ``bits`` bits each into bytes, LSB-first."""
    matrix = entropy.tokens_to_bits(tokens, bits)
    return np.packbits(matrix.reshape(-1), bitorder="little").tobytes()


def unpack_tokens(buf: bytes, n: int, bits: int) -> list[int]:
    nbytes = (n * bits + 7) // 8
    if len(buf) != nbytes:
        raise FormatError(f"raw payload of {n} x {bits}-bit tokens is {nbytes} bytes, got {len(buf)}")
    flat = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    if flat[n * bits :].any():
        raise FormatError("nonzero padding bits after the last raw token")
    if n == 0:
        return []
    return entropy.bits_to_tokens(flat[: n * bits].reshape(n, bits))


def _payload(grid: TokenGrid, mode: int, order: int) -> bytes:
    tokens = grid.flat()
    if mode == MODE_RAW:
        return pack_tokens(tokens, grid.bits)
    if mode == MODE_ARITH:
        model = entropy.adaptive_bit_model(order, grid.bits)
        return entropy.ac_encode(tokens, grid.bits, model).to_bytes()
    raise DomainError(f"unknown coding mode {mode}")


def encode_body(grid: TokenGrid, patch: int, mode: int = MODE_RAW, order: int = 1) -> bytes:
    """Header and payload, without the fallback section."""
    h, w = grid.shape
    payload = _payload(grid, mode, order)
    header = ContainerHeader(h * patch, w * patch, patch, grid.bits, mode, len(payload))
    return header.pack() + payload


def serialize(
    grid: TokenGrid,
    patch: int,
    mode: int = MODE_RAW,
    jpeg: Optional[bytes] = None,
    order: int = 1,
) -> bytes:
    body = encode_body(grid, patch, mode, order)
    jpeg = jpeg or b""
    return body + struct.pack("<I", len(jpeg)) + jpeg


@dataclass(frozen=True)
class Decoded:
    header: ContainerHeader
    grid: TokenGrid
    jpeg: Optional[bytes]


def deserialize(buf: bytes) -> Decoded:
    """Parse a container.

    Header and payload errors raise.  A missing, truncated or malformed
    fallback section is dropped with a warning and the tokens are still
    returned.
    """
    buf = bytes(buf)
    header = ContainerHeader.unpack(buf)
    end = HEADER_SIZE + header.payload_len
    if len(buf) < end:
        raise TruncationError(
            f"payload declares {header.payload_len} bytes, only {len(buf) - HEADER_SIZE} present"
        )
    payload = buf[HEADER_SIZE:end]
    h, w = header.grid_shape
    n = h * w
    if header.coding_mode == MODE_RAW:
        tokens = unpack_tokens(payload, n, header.bits)
    else:
        stream = entropy.CodedStream.from_bytes(payload)
        if stream.n_tokens != n or stream.bits != header.bits:
            raise FormatError(
                f"coded stream holds {stream.n_tokens} x {stream.bits}-bit tokens, "
                f"header implies {n} x {header.bits}"
            )
        model = entropy.model_from_id(stream.model_id, stream.model_params, stream.bits)
        tokens = entropy.ac_decode(stream, model)
    grid = TokenGrid(np.array(tokens, dtype=np.uint64).reshape(h, w), header.bits)
    return Decoded(header, grid, _read_fallback(buf[end:]))


def _read_fallback(tail: bytes) -> Optional[bytes]:
    if len(tail) < 4:
        log.warning("container has no fallback length field; ignoring")
        return None
    (jpeg_len,) = struct.unpack_from("<I", tail)
    if jpeg_len == 0:
        return None
    data = tail[4 : 4 + jpeg_len]
    if len(data) != jpeg_len or len(tail) != 4 + jpeg_len:
        log.warning("fallback section length mismatch; ignoring fallback")
        return None
    if not data.startswith(b"\xff\xd8"):
        log.warning("fallback section is not a JPEG stream; ignoring fallback")
        return None
    return data


def fallback_target(height: int, width: int) -> int:
    """Byte budget for the whole container: 8:1 versus raw 8-bit RGB."""
    return (height * width * 3) // 8


def jpeg_fallback_select(
    current_size: int,
    height: int,
    width: int,
    jpeg_encode: Optional[Callable[[int], bytes]],
) -> Optional[bytes]:
    """Pick the first JPEG quality whose encoding fits the remaining budget.

    ``current_size`` is the number of container bytes already written.  No
    fallback is added when the container already meets the 8:1 target, when
    it is 100 bytes or smaller, or when no encoder is available.
    """
    if jpeg_encode is None:
        return None
    target = fallback_target(height, width)
    if not (100 < current_size < target):
        return None
    remaining = target - current_size
    for quality in JPEG_QUALITIES:
        try:
            data = jpeg_encode(quality)
        except Exception as exc:
            log.warning("JPEG encode at quality %d failed: %s", quality, exc)
            continue
        if len(data) <= remaining:
            return data
    return None


def blend_decode(neural, base) -> np.ndarray:
    """0.7 * neural + 0.3 * base, both clamped first and the result clamped."""
    neural = as_image(neural)
    base = as_image(base)
    if neural.shape != base.shape:
        raise ShapeError(f"cannot blend {neural.shape} with {base.shape}")
    return np.clip(NEURAL_WEIGHT * neural + BASE_WEIGHT * base, -0.5, 0.5)


def pillow_jpeg_encoder(img: np.ndarray) -> Optional[Callable[[int], bytes]]:
    """JPEG encoder closure over ``img`` using Pillow, or None if unavailable."""
    try:
        from PIL import Image
    except ImportError:
        return None
    from .grid import image_to_bytes

    pixels = image_to_bytes(img)

    def encode(quality: int) -> bytes:
        import io

        out = io.BytesIO()
        Image.fromarray(pixels).save(out, format="JPEG", quality=quality)
        return out.getvalue()

    return encode


def pillow_jpeg_decode(data: bytes) -> Optional[np.ndarray]:
    """Decode JPEG bytes to an image in [-0.5, 0.5]; None if Pillow is missing."""
    try:
        from PIL import Image
    except ImportError:
        return None
    import io

    from .grid import image_from_bytes

    with Image.open(io.BytesIO(data)) as im:
        return image_from_bytes(np.array(im.convert("RGB")))
