"""Forward passes of the enhancement network's frequency and contrast blocks.

Feature maps are C x H x W.  The frequency block works on 8x8 tiles: each
tile is moved to the DCT domain, scaled per coefficient, moved back, scaled
per spatial position, and finally gated by a sigmoid of a 1x1 channel mix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .weights import ModelWeights

BLOCK = 8


def _dct_matrix(n: int = BLOCK) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(math.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    m[0] /= math.sqrt(2.0)
    return m


DCT8 = _dct_matrix()


def dct_block(block, inverse: bool = False) -> np.ndarray:
    """Orthonormal 2-D DCT-II of an 8x8 block (DCT-III when ``inverse``).

    Works on any array whose last two axes are 8x8.
    """
    x = np.asarray(block, dtype=np.float64)
    if x.shape[-2:] != (BLOCK, BLOCK):
        raise ShapeError(f"expected trailing 8x8 axes, got {x.shape}")
    m = DCT8.T if inverse else DCT8
    return m @ x @ m.T


def dct_1d(x, axis: int = -1) -> np.ndarray:
    return np.moveaxis(DCT8 @ np.moveaxis(np.asarray(x, dtype=np.float64), axis, -2), -2, axis)


@dataclass(frozen=True)
class FreqScales:
    dct_scale: np.ndarray  # C x 8 x 8, applied to DCT coefficients
    idct_scale: np.ndarray  # C x 8 x 8, applied to spatial tiles
    attn_weight: np.ndarray  # C x C, 1x1 channel mix feeding the gate
    attn_bias: np.ndarray  # C

    def __post_init__(self):
        C = self.dct_scale.shape[0]
        if (
            self.dct_scale.shape != (C, BLOCK, BLOCK)
            or self.idct_scale.shape != (C, BLOCK, BLOCK)
            or self.attn_weight.shape != (C, C)
            or self.attn_bias.shape != (C,)
        ):
            raise ShapeError("inconsistent frequency-attention parameter shapes")

    @property
    def channels(self) -> int:
        return self.dct_scale.shape[0]


def mid_frequency_weights() -> np.ndarray:
    """exp(-((r - 3)^2) / 8) with r the distance of (i, j) from the DC term."""
    i, j = np.meshgrid(np.arange(BLOCK), np.arange(BLOCK), indexing="ij")
    dist = np.sqrt(i**2 + j**2)
    return np.exp(-((dist - 3.0) ** 2) / 8.0)


def init_freq_weights(channels: int, seed: int = 0) -> FreqScales:
    """Mid-frequency emphasis for the DCT scales, ones for the spatial scales.

    The gate's 1x1 mix gets Xavier-uniform weights from ``seed``.
    """
    if channels < 1:
        raise ShapeError("channel count must be >= 1")
    rng = np.random.default_rng(seed)
    a = math.sqrt(6.0 / (2 * channels))
    return FreqScales(
        np.broadcast_to(mid_frequency_weights(), (channels, BLOCK, BLOCK)).copy(),
        np.ones((channels, BLOCK, BLOCK)),
        rng.uniform(-a, a, size=(channels, channels)),
        np.zeros(channels),
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _tiles(x: np.ndarray) -> tuple[np.ndarray, int, int]:
    C, H, W = x.shape
    ph, pw = -H % BLOCK, -W % BLOCK
    xp = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    Hp, Wp = H + ph, W + pw
    tiles = xp.reshape(C, Hp // BLOCK, BLOCK, Wp // BLOCK, BLOCK).transpose(0, 1, 3, 2, 4)
    return tiles, Hp, Wp


def _untile(tiles: np.ndarray, Hp: int, Wp: int) -> np.ndarray:
    C = tiles.shape[0]
    return tiles.transpose(0, 1, 3, 2, 4).reshape(C, Hp, Wp)


def frequency_transform(x, s: FreqScales) -> np.ndarray:
    """The pre-gate part: tile DCT, coefficient scaling, inverse DCT, spatial scaling."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != s.channels:
        raise ShapeError(f"expected {s.channels} x H x W features, got {x.shape}")
    C, H, W = x.shape
    tiles, Hp, Wp = _tiles(x)
    coeffs = dct_block(tiles) * s.dct_scale[:, None, None]
    spatial = dct_block(coeffs, inverse=True) * s.idct_scale[:, None, None]
    return _untile(spatial, Hp, Wp)[:, :H, :W]


def frequency_attention_forward(x, s: FreqScales) -> np.ndarray:
    y = frequency_transform(x, s)
    gate = _sigmoid(np.einsum("oc,chw->ohw", s.attn_weight, y) + s.attn_bias[:, None, None])
    return y * gate


@dataclass(frozen=True)
class ContrastParams:
    w1: np.ndarray  # hidden x C
    b1: np.ndarray
    w2: np.ndarray  # C x hidden
    b2: np.ndarray

    def __post_init__(self):
        hidden, C = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape != (C, hidden) or self.b2.shape != (C,):
            raise ShapeError("inconsistent contrast-gate parameter shapes")

    @property
    def channels(self) -> int:
        return self.w1.shape[1]


def init_contrast_params(channels: int, hidden: int = 16, seed: int = 0) -> ContrastParams:
    rng = np.random.default_rng(seed)
    a = math.sqrt(6.0 / (channels + hidden))
    return ContrastParams(
        rng.uniform(-a, a, size=(hidden, channels)),
        np.zeros(hidden),
        rng.uniform(-a, a, size=(channels, hidden)),
        np.zeros(channels),
    )


def contrast_gate(x, p: ContrastParams) -> np.ndarray:
    """Per-channel gate in (0, 1) from global average pooling."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != p.channels:
        raise ShapeError(f"expected {p.channels} x H x W features, got {x.shape}")
    pooled = x.mean(axis=(1, 2))
    h = p.w1 @ pooled + p.b1
    h = np.where(h >= 0, h, 0.2 * h)
    return _sigmoid(p.w2 @ h + p.b2)


def adaptive_contrast_forward(x, p: ContrastParams) -> np.ndarray:
    """x scaled per channel by 2 * gate, so a gate of 0.5 leaves x unchanged."""
    g = contrast_gate(x, p)
    return np.asarray(x, dtype=np.float64) * (2.0 * g)[:, None, None]


def freq_scales_to_tensors(s: FreqScales) -> dict[str, np.ndarray]:
    return {
        "freq.dct_scale": s.dct_scale,
        "freq.idct_scale": s.idct_scale,
        "freq.attn.weight": s.attn_weight,
        "freq.attn.bias": s.attn_bias,
    }


def freq_scales_from_weights(w: ModelWeights) -> FreqScales:
    return FreqScales(
        w.f64("freq.dct_scale"),
        w.f64("freq.idct_scale"),
        w.f64("freq.attn.weight"),
        w.f64("freq.attn.bias"),
    )


def contrast_to_tensors(p: ContrastParams) -> dict[str, np.ndarray]:
    return {"contrast.w1": p.w1, "contrast.b1": p.b1, "contrast.w2": p.w2, "contrast.b2": p.b2}


def contrast_from_weights(w: ModelWeights) -> ContrastParams:
    return ContrastParams(
        w.f64("contrast.w1"), w.f64("contrast.b1"), w.f64("contrast.w2"), w.f64("contrast.b2")
    )
