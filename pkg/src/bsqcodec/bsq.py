"""Binary spherical quantization.

A latent vector is projected down to ``L`` dimensions, put on the unit sphere
and snapped to the nearest vertex of the inscribed hypercube, whose entries
are all ``+-1/sqrt(L)``.  The ``2**L`` vertices form an implicit codebook: a
vertex is identified by its sign pattern alone, so no code vectors are stored.

All functions accept a single vector or a batch with the vector axis last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError, InvalidCodeError, ShapeError

DEGENERATE_NORM = 1e-12
CODE_TOLERANCE = 1e-9
UNIT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ProjectionWeights:
    """Down (L x d) and up (d x L) linear maps around the quantizer."""

    down: np.ndarray
    up: np.ndarray

    def __post_init__(self):
        if self.down.ndim != 2 or self.up.ndim != 2 or self.down.shape != self.up.shape[::-1]:
            raise ShapeError(
                f"projection shapes disagree: down {self.down.shape}, up {self.up.shape}"
            )

    @property
    def latent_dim(self) -> int:
        return self.down.shape[1]

    @property
    def bits(self) -> int:
        return self.down.shape[0]


def project(z, w: ProjectionWeights) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != w.latent_dim:
        raise ShapeError(f"latent has {z.shape[-1]} dims, projection expects {w.latent_dim}")
    return z @ w.down.T


def spherical_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm < DEGENERATE_NORM):
        raise DegenerateInputError(
            f"cannot normalize a vector with norm below {DEGENERATE_NORM:g}"
        )
    return v / norm


def binary_quantize(u) -> np.ndarray:
    """Snap unit vectors to ``sign(u)/sqrt(L)`` with sign(0) taken as +1."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(u, axis=-1) - 1.0) > UNIT_TOLERANCE):
        raise DomainError("binary_quantize expects unit vectors")
    scale = 1.0 / np.sqrt(u.shape[-1])
    return np.where(u >= 0, scale, -scale)


def back_project(uq, w: ProjectionWeights) -> np.ndarray:
    uq = np.asarray(uq, dtype=np.float64)
    if uq.shape[-1] != w.bits:
        raise ShapeError(f"code has {uq.shape[-1]} dims, projection expects {w.bits}")
    return uq @ w.up.T


def codes_to_indices(uq) -> np.ndarray:
    """Token index of each quantized code: bit i is set iff entry i is positive.

    Returns uint64 so that codes up to 64 bits fit.
    """
    uq = np.asarray(uq, dtype=np.float64)
    L = uq.shape[-1]
    if L > 64:
        raise DomainError(f"codes wider than 64 bits are not indexable, got {L}")
    scale = 1.0 / np.sqrt(L)
    if not np.all(np.abs(np.abs(uq) - scale) <= CODE_TOLERANCE):
        raise InvalidCodeError(f"entries must all be +-1/sqrt({L})")
    weights = np.uint64(1) << np.arange(L, dtype=np.uint64)
    return ((uq > 0).astype(np.uint64) * weights).sum(axis=-1, dtype=np.uint64)


def indices_to_codes(t, bits: int) -> np.ndarray:
    """Inverse of :func:`codes_to_indices`."""
    if not 1 <= bits <= 64:
        raise DomainError(f"bits must be in [1, 64], got {bits}")
    try:
        t = np.asarray(t, dtype=np.uint64)
    except OverflowError as exc:
        raise InvalidCodeError(f"token outside [0, 2^{bits})") from exc
    if bits < 64 and np.any(t >> np.uint64(bits)):
        raise InvalidCodeError(f"token outside [0, 2^{bits})")
    on = (t[..., None] >> np.arange(bits, dtype=np.uint64)) & np.uint64(1)
    scale = 1.0 / np.sqrt(bits)
    return np.where(on == 1, scale, -scale)


def _binary_entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    return np.where((p == 0) | (p == 1), 0.0, h)


def rate_estimate(bit_probs) -> float:
    """Bits per token under independent Bernoulli bits with the given P(bit = 1)."""
    p = np.asarray(bit_probs, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DomainError("bit probabilities must lie in [0, 1]")
    return float(_binary_entropy(p).sum())


def empirical_bit_probs(indices, bits: int) -> np.ndarray:
    """Per-position frequency of 1-bits over a set of token indices."""
    idx = np.asarray(indices, dtype=np.uint64).reshape(-1)
    if idx.size == 0:
        raise DomainError("no tokens to estimate bit frequencies from")
    on = (idx[:, None] >> np.arange(bits, dtype=np.uint64)) & np.uint64(1)
    return on.mean(axis=0)


def quantize(z, w: ProjectionWeights) -> tuple[np.ndarray, np.ndarray]:
    """Full bottleneck: latent -> (token indices, reconstructed latent)."""
    uq = binary_quantize(spherical_normalize(project(z, w)))
    return codes_to_indices(uq), back_project(uq, w)
