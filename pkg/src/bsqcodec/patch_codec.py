"""Image <-> token grid transform built from a small ViT autoencoder.

Encoding: patchify -> linear patch embedding + positions -> pre-LN
transformer blocks -> BSQ bottleneck -> token indices.  Decoding runs the
mirror path and finishes with a light convolutional enhancement added back
with a fixed skip weight.

Everything is plain numpy in float64, so outputs depend only on the inputs
and the weights.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import bsq
from .errors import DomainError, ShapeError
from .grid import TokenGrid, as_image
from .weights import ModelConfig, ModelWeights

SKIP_WEIGHT = 0.15
_LN_EPS = 1e-5


def patchify(img: np.ndarray, p: int) -> np.ndarray:
    """Split H x W x C into (H/p * W/p) rows of length p*p*C.

    Patches are in row-major grid order; each row is flattened as
    (row, col, channel).
    """
    img = np.asarray(img)
    if img.ndim != 3:
        raise ShapeError(f"expected H x W x C, got shape {img.shape}")
    H, W, C = img.shape
    if p < 1 or H % p or W % p:
        raise ShapeError(f"image {H}x{W} is not divisible into {p}x{p} patches (H={H}, W={W}, p={p})")
    h, w = H // p, W // p
    return img.reshape(h, p, w, p, C).transpose(0, 2, 1, 3, 4).reshape(h * w, p * p * C)


def unpatchify(patches: np.ndarray, H: int, W: int, p: int, channels: int = 3) -> np.ndarray:
    patches = np.asarray(patches)
    if p < 1 or H % p or W % p:
        raise ShapeError(f"H={H}, W={W} not divisible by p={p}")
    h, w = H // p, W // p
    if patches.shape != (h * w, p * p * channels):
        raise ShapeError(
            f"expected patch grid of shape {(h * w, p * p * channels)}, got {patches.shape}"
        )
    return patches.reshape(h, w, p, p, channels).transpose(0, 2, 1, 3, 4).reshape(H, W, channels)


def build_block_causal_mask(frames: int, tokens_per_frame: int) -> np.ndarray:
    """Additive mask: 0 where frame(j) <= frame(i), -inf elsewhere."""
    if frames < 1 or tokens_per_frame < 1:
        raise DomainError("frames and tokens_per_frame must be >= 1")
    frame = np.repeat(np.arange(frames), tokens_per_frame)
    return np.where(frame[None, :] <= frame[:, None], 0.0, -np.inf)


def masked_attention(q, k, v, mask=None) -> np.ndarray:
    """softmax(q k^T / sqrt(d_head) + mask) v over the last two axes."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes disagree: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1])
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if np.any(np.all(np.isneginf(mask), axis=-1)):
            raise DomainError("attention mask blocks every key for some query")
        scores = scores + mask
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return (e / e.sum(axis=-1, keepdims=True)) @ v


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def _layer_norm(x, weight, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + _LN_EPS) * weight + bias


def _block(x: np.ndarray, w: ModelWeights, prefix: str, heads: int, mask) -> np.ndarray:
    n, d = x.shape
    dh = d // heads
    h = _layer_norm(x, w.f64(f"{prefix}.ln1.weight"), w.f64(f"{prefix}.ln1.bias"))
    qkv = h @ w.f64(f"{prefix}.attn.qkv.weight").T + w.f64(f"{prefix}.attn.qkv.bias")
    qkv = qkv.reshape(n, 3, heads, dh).transpose(1, 2, 0, 3)
    att = masked_attention(qkv[0], qkv[1], qkv[2], mask)
    att = att.transpose(1, 0, 2).reshape(n, d)
    x = x + att @ w.f64(f"{prefix}.attn.proj.weight").T + w.f64(f"{prefix}.attn.proj.bias")
    h = _layer_norm(x, w.f64(f"{prefix}.ln2.weight"), w.f64(f"{prefix}.ln2.bias"))
    h = gelu(h @ w.f64(f"{prefix}.mlp.fc1.weight").T + w.f64(f"{prefix}.mlp.fc1.bias"))
    return x + h @ w.f64(f"{prefix}.mlp.fc2.weight").T + w.f64(f"{prefix}.mlp.fc2.bias")


def sinusoidal_positions(h: int, w: int, d: int) -> np.ndarray:
    """Fixed 2-D sin/cos table: first half of the channels encodes rows, second half columns."""
    if d % 4:
        raise ShapeError(f"sinusoidal positions need latent_dim divisible by 4, got {d}")
    quarter = d // 4
    freq = 1.0 / (10000.0 ** (np.arange(quarter) / quarter))
    rows = np.arange(h)[:, None] * freq
    cols = np.arange(w)[:, None] * freq
    row_emb = np.concatenate([np.sin(rows), np.cos(rows)], axis=1)
    col_emb = np.concatenate([np.sin(cols), np.cos(cols)], axis=1)
    table = np.concatenate(
        [np.repeat(row_emb, w, axis=0), np.tile(col_emb, (h, 1))], axis=1
    )
    return table


def positions(w: ModelWeights, h: int, wd: int, d: int) -> np.ndarray:
    if "pos_embed" in w:
        table = w.f64("pos_embed")
        if table.shape != (h * wd, d):
            raise ShapeError(
                f"learned positional table has shape {table.shape}, grid needs {(h * wd, d)}"
            )
        return table
    return sinusoidal_positions(h, wd, d)


def _projection(w: ModelWeights) -> bsq.ProjectionWeights:
    return bsq.ProjectionWeights(w.f64("bsq.down"), w.f64("bsq.up"))


def _check_config(w: ModelWeights, cfg: ModelConfig | None) -> ModelConfig:
    actual = ModelConfig.from_weights(w)
    if cfg is not None and cfg != actual:
        raise ShapeError(f"config {cfg} does not match weights {actual}")
    return actual


def _encode_frames(frames: Sequence[np.ndarray], w: ModelWeights, cfg: ModelConfig, causal: bool):
    imgs = [as_image(f) for f in frames]
    shape = imgs[0].shape
    for i, f in enumerate(imgs):
        if f.shape != shape:
            raise ShapeError(f"frame {i} has shape {f.shape}, frame 0 has {shape}")
    H, W, _ = shape
    p = cfg.patch
    patches = [patchify(f, p) for f in imgs]
    h, wd = H // p, W // p
    pos = positions(w, h, wd, cfg.latent_dim)
    emb_w, emb_b = w.f64("embed.weight"), w.f64("embed.bias")
    x = np.concatenate([pt @ emb_w.T + emb_b + pos for pt in patches], axis=0)
    mask = build_block_causal_mask(len(imgs), h * wd) if causal else None
    for i in range(cfg.depth):
        x = _block(x, w, f"enc.{i}", cfg.heads, mask)
    x = _layer_norm(x, w.f64("enc.norm.weight"), w.f64("enc.norm.bias"))
    return x, h, wd


def _latents_to_grid(z: np.ndarray, w: ModelWeights, cfg: ModelConfig, h: int, wd: int) -> TokenGrid:
    uq = bsq.binary_quantize(bsq.spherical_normalize(bsq.project(z, _projection(w))))
    return TokenGrid(bsq.codes_to_indices(uq).reshape(h, wd), cfg.bits)


def encode_latents(img, w: ModelWeights, cfg: ModelConfig | None = None) -> np.ndarray:
    """Continuous encoder output, one row of length latent_dim per patch."""
    cfg = _check_config(w, cfg)
    return _encode_frames([img], w, cfg, causal=False)[0]


def tokenize(img, w: ModelWeights, cfg: ModelConfig | None = None) -> TokenGrid:
    cfg = _check_config(w, cfg)
    z, h, wd = _encode_frames([img], w, cfg, causal=False)
    return _latents_to_grid(z, w, cfg, h, wd)


def tokenize_sequence(frames: Sequence, w: ModelWeights, cfg: ModelConfig | None = None) -> list[TokenGrid]:
    """Tokenize frames jointly; frame t attends only to frames 0..t."""
    if len(frames) == 0:
        return []
    cfg = _check_config(w, cfg)
    z, h, wd = _encode_frames(frames, w, cfg, causal=True)
    n = h * wd
    return [_latents_to_grid(z[t * n : (t + 1) * n], w, cfg, h, wd) for t in range(len(frames))]


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' convolution of an H x W x Cin map with (Cout, Cin, k, k) weights."""
    k = weight.shape[-1]
    pad = k // 2
    H, W, _ = x.shape
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    out = np.zeros((H, W, weight.shape[0]))
    for di in range(k):
        for dj in range(k):
            out += xp[di : di + H, dj : dj + W, :] @ weight[:, :, di, dj].T
    return out + bias


def enhance(base: np.ndarray, w: ModelWeights) -> np.ndarray:
    """Residual detail predicted from the base reconstruction."""
    h = gelu(conv2d(base, w.f64("enhance.conv1.weight"), w.f64("enhance.conv1.bias")))
    h = gelu(conv2d(h, w.f64("enhance.conv2.weight"), w.f64("enhance.conv2.bias")))
    return conv2d(h, w.f64("enhance.conv3.weight"), w.f64("enhance.conv3.bias"))


def decode_base(grid: TokenGrid, w: ModelWeights, cfg: ModelConfig | None = None) -> np.ndarray:
    """Decoder output before enhancement (not clamped)."""
    cfg = _check_config(w, cfg)
    if grid.bits != cfg.bits:
        raise ShapeError(f"grid has {grid.bits}-bit tokens, weights expect {cfg.bits}")
    h, wd = grid.shape
    uq = bsq.indices_to_codes(grid.tokens.reshape(-1), cfg.bits)
    x = bsq.back_project(uq, _projection(w)) + positions(w, h, wd, cfg.latent_dim)
    for i in range(cfg.depth):
        x = _block(x, w, f"dec.{i}", cfg.heads, None)
    x = _layer_norm(x, w.f64("dec.norm.weight"), w.f64("dec.norm.bias"))
    patches = x @ w.f64("head.weight").T + w.f64("head.bias")
    return unpatchify(patches, h * cfg.patch, wd * cfg.patch, cfg.patch)


def detokenize(grid: TokenGrid, w: ModelWeights, cfg: ModelConfig | None = None) -> np.ndarray:
    base = decode_base(grid, w, cfg)
    out = base + SKIP_WEIGHT * enhance(base, w)
    return np.clip(out, -0.5, 0.5)
