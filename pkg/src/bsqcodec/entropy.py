"""Adaptive binary arithmetic coding of token streams.

Tokens of ``L`` bits are coded one binary decision at a time, least
significant bit first, so the chain-rule factorization of the token sequence
is preserved at bit granularity:

    P(t_1..t_n) = prod_i prod_b P(bit_b(t_i) | t_1..t_{i-1}, bits_<b(t_i))

The coder is a byte-oriented range coder with a 32-bit range, a 33-bit
``low`` register and a carry cache, driven by 12-bit probabilities.  The
interval state is pure integer arithmetic, so output bytes are identical on
every platform.
"""

from __future__ import annotations

import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, FormatError, TruncationError

PROB_BITS = 12
PROB_ONE = 1 << PROB_BITS
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF

_STREAM_HEADER = struct.Struct("<IBBH")

MODEL_UNIFORM = 0
MODEL_ADAPTIVE = 1


class BitContext(NamedTuple):
    """Everything a model may condition on when predicting one bit."""

    position: int  # bit index inside the current token
    partial: int  # bits 0..position-1 of the current token
    previous: int  # the previously coded token (0 before the first)


def quantize_probability(p: float) -> int:
    """Map P(bit = 1) to a 12-bit integer in [1, 4095]."""
    q = int(round(p * PROB_ONE))
    return min(max(q, 1), PROB_ONE - 1)


class ProbabilityModel(ABC):
    """Sequential bit predictor shared by encoder and decoder.

    After :meth:`reset`, feeding the same observations must reproduce the
    same probabilities, otherwise decoding diverges from encoding.
    """

    model_id: int
    params: int = 0

    @abstractmethod
    def next_bit_probability(self, context: BitContext) -> float:
        """Return P(next bit = 1) given ``context``."""

    @abstractmethod
    def update(self, context: BitContext, bit: int) -> None:
        """Account for the bit actually observed in ``context``."""

    @abstractmethod
    def reset(self) -> None:
        """Return to the initial state."""

    def quantized_probability(self, context: BitContext) -> int:
        """P(next bit = 1) as the 12-bit integer the coder consumes."""
        return quantize_probability(self.next_bit_probability(context))


class UniformModel(ProbabilityModel):
    """Static p = 1/2 for every bit; codes each token in exactly L bits."""

    model_id = MODEL_UNIFORM

    def next_bit_probability(self, context: BitContext) -> float:
        return 0.5

    def update(self, context: BitContext, bit: int) -> None:
        pass

    def reset(self) -> None:
        pass


class AdaptiveBitModel(ProbabilityModel):
    """Counting context model with Laplace smoothing.

    The context of bit ``b`` is the bit position, the ``order`` preceding
    bits of the same token and bit ``b`` of the previous token.  Each context
    keeps zero/one counts and predicts ``(n1 + 1) / (n0 + n1 + 2)``.
    """

    model_id = MODEL_ADAPTIVE

    def __init__(self, order: int, bits: int):
        if order not in (0, 1, 2):
            raise DomainError(f"context order must be 0, 1 or 2, got {order}")
        if not 1 <= bits <= 64:
            raise DomainError(f"bits per token must be in [1, 64], got {bits}")
        self.order = order
        self.bits = bits
        self.params = order
        self.reset()

    def reset(self) -> None:
        size = self.bits << (self.order + 1)
        self._zeros = [0] * size
        self._ones = [0] * size

    def _slot(self, context: BitContext) -> int:
        pos = context.position
        k = self.order
        if pos >= k:
            hist = (context.partial >> (pos - k)) & ((1 << k) - 1)
        else:
            hist = context.partial
        return (((pos << k) | hist) << 1) | ((context.previous >> pos) & 1)

    def counts(self, context: BitContext) -> tuple[int, int]:
        s = self._slot(context)
        return self._zeros[s], self._ones[s]

    def next_bit_probability(self, context: BitContext) -> float:
        s = self._slot(context)
        n1 = self._ones[s]
        return (n1 + 1) / (self._zeros[s] + n1 + 2)

    def quantized_probability(self, context: BitContext) -> int:
        # integer round-half-up of 4096 * (n1 + 1) / (n0 + n1 + 2)
        s = self._slot(context)
        total = self._zeros[s] + self._ones[s] + 2
        q = ((self._ones[s] + 1) * (2 * PROB_ONE) + total) // (2 * total)
        return min(max(q, 1), PROB_ONE - 1)

    def update(self, context: BitContext, bit: int) -> None:
        s = self._slot(context)
        if bit:
            self._ones[s] += 1
        else:
            self._zeros[s] += 1


def adaptive_bit_model(order: int, bits: int) -> AdaptiveBitModel:
    return AdaptiveBitModel(order, bits)


def model_from_id(model_id: int, params: int, bits: int) -> ProbabilityModel:
    """Rebuild the model named in a stream header."""
    if model_id == MODEL_UNIFORM:
        return UniformModel()
    if model_id == MODEL_ADAPTIVE:
        try:
            return AdaptiveBitModel(params, bits)
        except DomainError as exc:
            raise FormatError(f"bad adaptive model parameters: {exc}") from exc
    raise FormatError(f"unknown probability model id {model_id}")


class RangeEncoder:
    """Binary range encoder.

    The very first byte produced by the carry cache is always zero (the
    coded value lies in [0, 1)), so it is dropped; :class:`RangeDecoder`
    primes itself with four bytes instead of five.
    """

    def __init__(self) -> None:
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def encode(self, bit: int, p1: int) -> None:
        """Code ``bit`` where ``p1`` is P(bit = 1) scaled to 4096."""
        bound = (self.range >> PROB_BITS) * p1
        if bit:
            self.range = bound
        else:
            self.low += bound
            self.range -= bound
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def _shift_low(self) -> None:
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            out = self._out
            out.append((self._cache + carry) & 0xFF)
            pad = (0xFF + carry) & 0xFF
            for _ in range(self._cache_size - 1):
                out.append(pad)
            self._cache_size = 0
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        # the leading byte carries no information
        assert self._out[0] == 0
        return bytes(self._out[1:])


class RangeDecoder:
    def __init__(self, data: bytes):
        if len(data) < 4:
            raise TruncationError(f"coded stream needs at least 4 bytes, got {len(data)}")
        self._data = data
        self._pos = 4
        self.code = int.from_bytes(data[:4], "big")
        self.range = _MASK32

    def decode(self, p1: int) -> int:
        bound = (self.range >> PROB_BITS) * p1
        if self.code < bound:
            self.range = bound
            bit = 1
        else:
            self.code -= bound
            self.range -= bound
            bit = 0
        while self.range < _TOP:
            if self._pos >= len(self._data):
                raise TruncationError(
                    f"coded stream ended after {len(self._data)} bytes while decoding"
                )
            self.range <<= 8
            self.code = ((self.code << 8) | self._data[self._pos]) & _MASK32
            self._pos += 1
        return bit

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)


@dataclass(frozen=True)
class CodedStream:
    """Arithmetic-coded token payload plus the parameters needed to decode it."""

    data: bytes
    n_tokens: int
    bits: int
    model_id: int
    model_params: int = 0

    def to_bytes(self) -> bytes:
        head = _STREAM_HEADER.pack(self.n_tokens, self.bits, self.model_id, self.model_params)
        return head + self.data

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CodedStream":
        if len(buf) < _STREAM_HEADER.size:
            raise TruncationError(
                f"coded stream header needs {_STREAM_HEADER.size} bytes, got {len(buf)}"
            )
        n_tokens, bits, model_id, params = _STREAM_HEADER.unpack_from(buf)
        if not 1 <= bits <= 64:
            raise FormatError(f"bits per token must be in [1, 64], got {bits}")
        return cls(bytes(buf[_STREAM_HEADER.size :]), n_tokens, bits, model_id, params)

    @property
    def size_bits(self) -> int:
        return 8 * (len(self.data) + _STREAM_HEADER.size)


def _check_tokens(tokens: Sequence[int], bits: int) -> list[int]:
    if not 1 <= bits <= 64:
        raise DomainError(f"bits per token must be in [1, 64], got {bits}")
    limit = 1 << bits
    out = [int(t) for t in tokens]
    for i, t in enumerate(out):
        if not 0 <= t < limit:
            raise DomainError(f"token {t} at position {i} outside [0, 2^{bits})")
    return out


def _kernel_kind(model: ProbabilityModel) -> int | None:
    # exact type match: subclasses may override prediction
    if type(model) is UniformModel:
        return _kernels.KIND_UNIFORM
    if type(model) is AdaptiveBitModel:
        return _kernels.KIND_ADAPTIVE
    return None


def tokens_to_bits(tokens: Sequence[int], bits: int) -> np.ndarray:
    """Expand tokens into an ``(n, bits)`` uint8 matrix, least significant bit first."""
    arr = np.array(tokens, dtype=np.uint64).reshape(-1)
    shifts = np.arange(bits, dtype=np.uint64)
    return ((arr[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)


def bits_to_tokens(matrix: np.ndarray) -> list[int]:
    shifts = np.arange(matrix.shape[1], dtype=np.uint64)
    vals = (matrix.astype(np.uint64) << shifts).sum(axis=1, dtype=np.uint64)
    return [int(v) for v in vals]


def _order(model: ProbabilityModel) -> int:
    return getattr(model, "order", 0)


def ac_encode(
    tokens: Iterable[int], bits: int, model: ProbabilityModel, *, fast: bool = True
) -> CodedStream:
    """Arithmetic-code ``tokens`` with a freshly reset ``model``.

    Built-in models run through a compiled loop unless ``fast`` is False;
    any other :class:`ProbabilityModel` uses the reference Python loop.
    """
    toks = _check_tokens(list(tokens), bits)
    if len(toks) > _MASK32:
        raise DomainError("too many tokens for a single stream")
    model.reset()
    kind = _kernel_kind(model) if fast else None
    if kind is not None:
        data = _kernels.encode_bits(tokens_to_bits(toks, bits), kind, _order(model))
        return CodedStream(data.tobytes(), len(toks), bits, model.model_id, model.params)
    enc = RangeEncoder()
    predict = model.quantized_probability
    update = model.update
    previous = 0
    for tok in toks:
        partial = 0
        for b in range(bits):
            ctx = BitContext(b, partial, previous)
            bit = (tok >> b) & 1
            enc.encode(bit, predict(ctx))
            update(ctx, bit)
            partial |= bit << b
        previous = tok
    return CodedStream(enc.finish(), len(toks), bits, model.model_id, model.params)


def ac_decode(stream: CodedStream, model: ProbabilityModel, *, fast: bool = True) -> list[int]:
    """Invert :func:`ac_encode`; ``model`` must match the encoder's."""
    if model.model_id != stream.model_id or model.params != stream.model_params:
        raise FormatError(
            f"stream was coded with model {stream.model_id}/{stream.model_params}, "
            f"decoder given {model.model_id}/{model.params}"
        )
    bits = stream.bits
    if len(stream.data) < 4:
        raise TruncationError(f"coded stream needs at least 4 bytes, got {len(stream.data)}")
    model.reset()
    kind = _kernel_kind(model) if fast else None
    if kind is not None:
        data = np.frombuffer(stream.data, dtype=np.uint8)
        matrix, status = _kernels.decode_bits(data, stream.n_tokens, bits, kind, _order(model))
        if status == _kernels.STATUS_TRUNCATED:
            raise TruncationError(
                f"coded stream ended after {len(stream.data)} bytes while decoding"
            )
        if status == _kernels.STATUS_TRAILING:
            raise FormatError(f"unread bytes remain after {stream.n_tokens} tokens")
        return bits_to_tokens(matrix)
    dec = RangeDecoder(stream.data)
    predict = model.quantized_probability
    update = model.update
    previous = 0
    out = []
    for _ in range(stream.n_tokens):
        tok = 0
        for b in range(bits):
            ctx = BitContext(b, tok, previous)
            bit = dec.decode(predict(ctx))
            update(ctx, bit)
            tok |= bit << b
        out.append(tok)
        previous = tok
    if not dec.exhausted:
        raise FormatError(f"unread bytes remain after {stream.n_tokens} tokens")
    return out


def cross_entropy_bits(
    tokens: Iterable[int], bits: int, model: ProbabilityModel, *, fast: bool = True
) -> float:
    """Ideal code length of ``tokens`` in bits under the coder's quantized probabilities."""
    toks = _check_tokens(list(tokens), bits)
    model.reset()
    kind = _kernel_kind(model) if fast else None
    if kind is not None:
        matrix = tokens_to_bits(toks, bits)
        q = _kernels.probability_trace(matrix, kind, _order(model)) / PROB_ONE
        p = np.where(matrix == 1, q, 1.0 - q)
        return float(-np.log2(p).sum())
    total = 0.0
    previous = 0
    for tok in toks:
        partial = 0
        for b in range(bits):
            ctx = BitContext(b, partial, previous)
            p1 = model.quantized_probability(ctx) / PROB_ONE
            bit = (tok >> b) & 1
            total -= math.log2(p1 if bit else 1.0 - p1)
            model.update(ctx, bit)
            partial |= bit << b
        previous = tok
    return total
