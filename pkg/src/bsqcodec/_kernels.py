"""Compiled range-coder loops for the built-in probability models.

These mirror ``RangeEncoder``/``RangeDecoder`` driven by ``UniformModel`` or
``AdaptiveBitModel`` step for step; the pure-Python path in ``entropy`` is the
reference and the test suite checks both produce identical bytes.
"""

import numpy as np
from numba import njit

KIND_UNIFORM = 0
KIND_ADAPTIVE = 1

STATUS_OK = 0
STATUS_TRUNCATED = 1
STATUS_TRAILING = 2

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


@njit(cache=True)
def _q12(bits, i, b, order, zeros, ones):
    start = b - order if b >= order else 0
    hist = 0
    for j in range(start, b):
        hist |= np.int64(bits[i, j]) << (j - start)
    prev = np.int64(bits[i - 1, b]) if i > 0 else np.int64(0)
    s = (((np.int64(b) << order) | hist) << 1) | prev
    total = zeros[s] + ones[s] + 2
    q = ((ones[s] + 1) * 8192 + total) // (2 * total)
    if q < 1:
        q = 1
    elif q > 4095:
        q = 4095
    return s, q


@njit(cache=True)
def encode_bits(bits, kind, order):
    n, L = bits.shape
    out = np.empty(2 * n * L + 16, np.uint8)
    nout = 0
    low = np.int64(0)
    rng = np.int64(_MASK32)
    cache = np.int64(0)
    cache_size = 1
    zeros = np.zeros(L << (order + 1), np.int64)
    ones = np.zeros(L << (order + 1), np.int64)
    shifts = 0
    for i in range(n):
        for b in range(L):
            bit = bits[i, b]
            s = 0
            q = 2048
            if kind == KIND_ADAPTIVE:
                s, q = _q12(bits, i, b, order, zeros, ones)
            bound = (rng >> 12) * q
            if bit:
                rng = bound
            else:
                low += bound
                rng -= bound
            if kind == KIND_ADAPTIVE:
                if bit:
                    ones[s] += 1
                else:
                    zeros[s] += 1
            while rng < _TOP:
                rng <<= 8
                shifts += 1
                if low < 0xFF000000 or low > _MASK32:
                    carry = low >> 32
                    out[nout] = (cache + carry) & 0xFF
                    nout += 1
                    for _ in range(cache_size - 1):
                        out[nout] = (0xFF + carry) & 0xFF
                        nout += 1
                    cache_size = 0
                    cache = (low >> 24) & 0xFF
                cache_size += 1
                low = (low & 0x00FFFFFF) << 8
    for _ in range(5):
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            out[nout] = (cache + carry) & 0xFF
            nout += 1
            for _ in range(cache_size - 1):
                out[nout] = (0xFF + carry) & 0xFF
                nout += 1
            cache_size = 0
            cache = (low >> 24) & 0xFF
        cache_size += 1
        low = (low & 0x00FFFFFF) << 8
    return out[1:nout].copy()


@njit(cache=True)
def decode_bits(data, n, L, kind, order):
    bits = np.zeros((n, L), np.uint8)
    zeros = np.zeros(L << (order + 1), np.int64)
    ones = np.zeros(L << (order + 1), np.int64)
    size = data.shape[0]
    code = np.int64(0)
    for j in range(4):
        code = (code << 8) | np.int64(data[j])
    pos = 4
    rng = np.int64(_MASK32)
    for i in range(n):
        for b in range(L):
            s = 0
            q = 2048
            if kind == KIND_ADAPTIVE:
                s, q = _q12(bits, i, b, order, zeros, ones)
            bound = (rng >> 12) * q
            if code < bound:
                rng = bound
                bits[i, b] = 1
                if kind == KIND_ADAPTIVE:
                    ones[s] += 1
            else:
                code -= bound
                rng -= bound
                if kind == KIND_ADAPTIVE:
                    zeros[s] += 1
            while rng < _TOP:
                if pos >= size:
                    return bits, STATUS_TRUNCATED
                rng <<= 8
                code = ((code << 8) | np.int64(data[pos])) & _MASK32
                pos += 1
    if pos != size:
        return bits, STATUS_TRAILING
    return bits, STATUS_OK


@njit(cache=True)
def probability_trace(bits, kind, order):
    n, L = bits.shape
    trace = np.empty((n, L), np.int64)
    zeros = np.zeros(L << (order + 1), np.int64)
    ones = np.zeros(L << (order + 1), np.int64)
    for i in range(n):
        for b in range(L):
            if kind == KIND_ADAPTIVE:
                s, q = _q12(bits, i, b, order, zeros, ones)
                trace[i, b] = q
                if bits[i, b]:
                    ones[s] += 1
                else:
                    zeros[s] += 1
            else:
                trace[i, b] = 2048
    return trace
