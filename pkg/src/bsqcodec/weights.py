"""Named tensor store and its ``GANW`` file format.

Layout (all integers little-endian)::

    b"GANW"  u8 version=1  u32 count
    count x { u16 name_len, name (utf-8), u8 ndim, ndim x u32 dim, f32 data (row-major) }

Tensors are written in sorted name order so equal stores give equal files.
"""

from __future__ import annotations

import os
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import FormatError, ShapeError, TruncationError

MAGIC = b"GANW"
VERSION = 1


class ModelWeights(Mapping):
    """Immutable mapping from tensor name to float32 array."""

    def __init__(self, tensors: Mapping[str, np.ndarray]):
        store = {}
        for name, arr in tensors.items():
            a = np.array(arr, dtype=np.float32)
            a.setflags(write=False)
            store[name] = a
        self._tensors = store

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"weights have no tensor named {name!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._tensors))

    def __len__(self) -> int:
        return len(self._tensors)

    def f64(self, name: str) -> np.ndarray:
        return self[name].astype(np.float64)

    def merged(self, extra: Mapping[str, np.ndarray]) -> "ModelWeights":
        return ModelWeights({**self._tensors, **extra})

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<BI", VERSION, len(self))]
        for name in self:
            arr = self._tensors[name]
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<B", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ModelWeights":
        reader = _Reader(buf)
        if reader.take(4) != MAGIC:
            raise FormatError("not a GANW weights file (bad magic)")
        version, count = reader.unpack("<BI")
        if version != VERSION:
            raise FormatError(f"unsupported GANW version {version}")
        tensors = {}
        for _ in range(count):
            (name_len,) = reader.unpack("<H")
            try:
                name = reader.take(name_len).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError("tensor name is not valid utf-8") from exc
            (ndim,) = reader.unpack("<B")
            dims = reader.unpack(f"<{ndim}I")
            n = int(np.prod(dims, dtype=np.int64))
            data = np.frombuffer(reader.take(4 * n), dtype="<f4").reshape(dims)
            if name in tensors:
                raise FormatError(f"duplicate tensor {name!r}")
            tensors[name] = data
        if reader.remaining:
            raise FormatError(f"{reader.remaining} trailing bytes after last tensor")
        return cls(tensors)

    def save(self, path: str | os.PathLike) -> None:
        from .fileio import atomic_write

        atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ModelWeights":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncationError(
                f"needed {n} bytes at offset {self.pos}, only {len(self.buf) - self.pos} left"
            )
        out = bytes(self.buf[self.pos : self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    @property
    def remaining(self) -> int:
        return len(self.buf) - self.pos


@dataclass(frozen=True)
class ModelConfig:
    patch: int = 8
    latent_dim: int = 64
    bits: int = 16
    depth: int = 4
    heads: int = 4
    enhance_channels: int = 16

    def __post_init__(self):
        if self.latent_dim % self.heads:
            raise ShapeError(f"latent_dim {self.latent_dim} not divisible by {self.heads} heads")
        if not 1 <= self.bits <= 64:
            raise ShapeError(f"bits must be in [1, 64], got {self.bits}")

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch * self.patch

    @classmethod
    def from_weights(cls, w: ModelWeights) -> "ModelConfig":
        """Recover the architecture from tensor shapes and ``meta.*`` entries."""
        try:
            d, patch_dim = w["embed.weight"].shape
            bits = w["bsq.down"].shape[0]
            heads = int(w["meta.num_heads"][0])
            enhance = w["enhance.conv1.weight"].shape[0]
        except KeyError as exc:
            raise FormatError(str(exc)) from exc
        patch = int(round((patch_dim / 3) ** 0.5))
        if 3 * patch * patch != patch_dim:
            raise FormatError(f"patch embedding width {patch_dim} is not 3*p*p")
        depth = 0
        while f"enc.{depth}.ln1.weight" in w:
            depth += 1
        return cls(patch, d, bits, depth, heads, enhance)


def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def _block(rng, prefix: str, d: int) -> dict[str, np.ndarray]:
    h = 4 * d
    return {
        f"{prefix}.ln1.weight": np.ones(d),
        f"{prefix}.ln1.bias": np.zeros(d),
        f"{prefix}.attn.qkv.weight": _xavier(rng, (3 * d, d), d, 3 * d),
        f"{prefix}.attn.qkv.bias": np.zeros(3 * d),
        f"{prefix}.attn.proj.weight": _xavier(rng, (d, d), d, d),
        f"{prefix}.attn.proj.bias": np.zeros(d),
        f"{prefix}.ln2.weight": np.ones(d),
        f"{prefix}.ln2.bias": np.zeros(d),
        f"{prefix}.mlp.fc1.weight": _xavier(rng, (h, d), d, h),
        f"{prefix}.mlp.fc1.bias": np.zeros(h),
        f"{prefix}.mlp.fc2.weight": _xavier(rng, (d, h), h, d),
        f"{prefix}.mlp.fc2.bias": np.zeros(d),
    }


def _conv(rng, cout: int, cin: int, k: int) -> np.ndarray:
    return _xavier(rng, (cout, cin, k, k), cin * k * k, cout * k * k)


def init_weights(cfg: ModelConfig, seed: int = 0, grid: tuple[int, int] | None = None) -> ModelWeights:
    """Deterministic Xavier-uniform weights for ``cfg``.

    With ``grid=(h, w)`` a learned positional table for that token grid is
    included; otherwise the codec falls back to fixed sinusoidal positions.
    """
    rng = np.random.default_rng(seed)
    d, pd, L, c = cfg.latent_dim, cfg.patch_dim, cfg.bits, cfg.enhance_channels
    t: dict[str, np.ndarray] = {
        "meta.num_heads": np.array([cfg.heads]),
        "embed.weight": _xavier(rng, (d, pd), pd, d),
        "embed.bias": np.zeros(d),
    }
    if grid is not None:
        t["pos_embed"] = rng.normal(0.0, 0.02, size=(grid[0] * grid[1], d))
    for i in range(cfg.depth):
        t.update(_block(rng, f"enc.{i}", d))
    t["enc.norm.weight"] = np.ones(d)
    t["enc.norm.bias"] = np.zeros(d)
    t["bsq.down"] = _xavier(rng, (L, d), d, L)
    t["bsq.up"] = _xavier(rng, (d, L), L, d)
    for i in range(cfg.depth):
        t.update(_block(rng, f"dec.{i}", d))
    t["dec.norm.weight"] = np.ones(d)
    t["dec.norm.bias"] = np.zeros(d)
    t["head.weight"] = _xavier(rng, (pd, d), d, pd)
    t["head.bias"] = np.zeros(pd)
    t["enhance.conv1.weight"] = _conv(rng, c, 3, 3)
    t["enhance.conv1.bias"] = np.zeros(c)
    t["enhance.conv2.weight"] = _conv(rng, c, c, 3)
    t["enhance.conv2.bias"] = np.zeros(c)
    t["enhance.conv3.weight"] = _conv(rng, 3, c, 1)
    t["enhance.conv3.bias"] = np.zeros(3)
    return ModelWeights(t)
