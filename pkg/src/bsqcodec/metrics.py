"""Image quality metrics and the training-loss formulas as plain forward functions.

Images are H x W x 3 arrays.  Codec images live in [-0.5, 0.5]; the SSIM
family shifts them by +0.5 so that a data range of 1.0 means [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, ShapeError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

LUMA = np.array([0.299, 0.587, 0.114])
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]])
RGB_TO_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.14713, -0.28886, 0.436],
        [0.615, -0.51499, -0.10001],
    ]
)
YUV_CHANNEL_WEIGHTS = np.array([0.5, 2.0, 2.0])

LOSS_WEIGHTS = {
    "reconstruction": 1.0,
    "perceptual": 0.2,
    "ms_ssim": 0.3,
    "color": 0.15,
    "generator": 0.05,
}


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' filtering over the two spatial axes of H x W x C
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def _ssim_terms(x: np.ndarray, y: np.ndarray, data_range: float):
    """Per-channel mean SSIM and contrast-structure term."""
    g = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x**2
    syy = _filter_valid(y * y, g) - mu_y**2
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    cs_map = (2 * sxy + c2) / (sxx + syy + c2)
    ssim_map = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1) * cs_map
    return ssim_map.mean(axis=(0, 1)), cs_map.mean(axis=(0, 1))


def _avg_pool2(x: np.ndarray) -> np.ndarray:
    # 2x2 mean pooling; odd sides get one zero on each end, as count-include-pad pooling does
    pad = [(s % 2, s % 2) for s in x.shape[:2]] + [(0, 0)]
    x = np.pad(x, pad)
    H, W = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:H, :W]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ssim(a, b, data_range: float = 1.0) -> float:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5), mean over channels."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise DomainError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    s, _ = _ssim_terms(a + 0.5, b + 0.5, data_range)
    return float(s.mean())


def ms_ssim_scales(height: int, width: int, max_scales: int = 5) -> int:
    """Number of scales an image supports: min side >= 11 * 2**(scales - 1)."""
    side = min(height, width)
    if side < SSIM_WINDOW:
        raise DomainError(f"MS-SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {height}x{width}")
    scales = 1
    while scales < max_scales and side >= SSIM_WINDOW * 2**scales:
        scales += 1
    return scales


def ms_ssim(a, b, data_range: float = 1.0, scales: int = 5) -> float:
    """Multi-scale SSIM.

    Images too small for ``scales`` levels use fewer levels with the leading
    weights renormalized to sum to one.  Per-scale terms are clipped at zero
    before the weighted geometric mean.
    """
    a, b = _pair(a, b)
    if a.ndim != 3:
        raise ShapeError(f"expected H x W x C images, got {a.shape}")
    n = ms_ssim_scales(a.shape[0], a.shape[1], scales)
    weights = np.array(MS_SSIM_WEIGHTS[:n])
    weights = weights / weights.sum()
    x, y = a + 0.5, b + 0.5
    factors = []
    for level in range(n):
        s, cs = _ssim_terms(x, y, data_range)
        if level < n - 1:
            factors.append(np.maximum(cs, 0.0))
            x, y = _avg_pool2(x), _avg_pool2(y)
        else:
            factors.append(np.maximum(s, 0.0))
    per_channel = np.prod(np.stack(factors) ** weights[:, None], axis=0)
    return float(per_channel.mean())


def ms_ssim_loss(a, b) -> float:
    """1 - MS-SSIM, or 0.5 * MSE when the images are too small for MS-SSIM."""
    a, b = _pair(a, b)
    try:
        return 1.0 - ms_ssim(a, b)
    except DomainError:
        return 0.5 * float(np.mean((a - b) ** 2))


def _correlate3x3(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    H, W = x.shape
    xp = np.pad(x, 1)
    out = np.zeros_like(x)
    for i in range(3):
        for j in range(3):
            if kernel[i, j]:
                out += kernel[i, j] * xp[i : i + H, j : j + W]
    return out


def edge_weights(img) -> np.ndarray:
    """Per-pixel weights in (1, 3): sigmoid(5 * Sobel magnitude) * 2 + 1.

    Sobel responses use zero padding, so borders of images whose luma is
    not 0 pick up a spurious edge.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got {img.shape}")
    gray = img @ LUMA
    gx = _correlate3x3(gray, SOBEL_X)
    gy = _correlate3x3(gray, SOBEL_Y)
    magnitude = np.sqrt(gx**2 + gy**2)
    return 2.0 / (1.0 + np.exp(-5.0 * magnitude)) + 1.0


def edge_weighted_l1(a, b) -> float:
    """Mean of edge_weights(b) * |a - b| over pixels and channels."""
    a, b = _pair(a, b)
    return float(np.mean(edge_weights(b)[..., None] * np.abs(a - b)))


def rgb_to_yuv(img) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) @ RGB_TO_YUV.T


def yuv_color_loss(a, b) -> float:
    a, b = _pair(a, b)
    diff = np.abs(rgb_to_yuv(a) - rgb_to_yuv(b)) * YUV_CHANNEL_WEIGHTS
    return float(diff.mean())


def hinge_losses(d_real, d_fake) -> tuple[float, float]:
    """(generator loss, discriminator loss) for hinge-loss adversarial training."""
    d_real = np.asarray(d_real, dtype=np.float64)
    d_fake = np.asarray(d_fake, dtype=np.float64)
    if d_real.size == 0 or d_fake.size == 0:
        raise DomainError("discriminator outputs must be non-empty")
    g_loss = -float(d_fake.mean())
    d_loss = float(np.maximum(1.0 - d_real, 0).mean() + np.maximum(1.0 + d_fake, 0).mean())
    return g_loss, d_loss


@dataclass(frozen=True)
class LossReport:
    reconstruction: float
    ms_ssim_term: float
    color: float
    perceptual: Optional[float] = None
    generator: Optional[float] = None
    total: float = 0.0


def aggregate_losses(
    reconstruction: float,
    ms_ssim_term: float,
    color: float,
    perceptual: Optional[float] = None,
    generator: Optional[float] = None,
) -> LossReport:
    """Weighted total: recon + 0.2 perceptual + 0.3 ms_ssim + 0.15 color + 0.05 generator."""
    for name, value in (
        ("reconstruction", reconstruction),
        ("ms_ssim_term", ms_ssim_term),
        ("color", color),
        ("perceptual", perceptual),
    ):
        if value is not None and value < 0:
            raise DomainError(f"{name} loss must be non-negative, got {value}")
    total = (
        LOSS_WEIGHTS["reconstruction"] * reconstruction
        + LOSS_WEIGHTS["ms_ssim"] * ms_ssim_term
        + LOSS_WEIGHTS["color"] * color
    )
    if perceptual is not None:
        total += LOSS_WEIGHTS["perceptual"] * perceptual
    if generator is not None:
        total += LOSS_WEIGHTS["generator"] * generator
    return LossReport(reconstruction, ms_ssim_term, color, perceptual, generator, total)


def reconstruction_losses(reconstructed, target, perceptual=None, d_fake=None) -> LossReport:
    """All image-derived loss terms for one reconstruction/target pair."""
    generator = None
    if d_fake is not None:
        generator, _ = hinge_losses(np.ones(1), d_fake)
    return aggregate_losses(
        edge_weighted_l1(reconstructed, target),
        ms_ssim_loss(reconstructed, target),
        yuv_color_loss(reconstructed, target),
        perceptual,
        generator,
    )
