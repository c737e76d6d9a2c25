"""Independent reference computations used to check the package.

Written from the textbook definitions with scipy / plain Python, sharing no
code with bsqcodec.
"""

import math
from collections import Counter

import numpy as np
from scipy import fft, ndimage, signal


def binary_entropy(p):
    if p in (0.0, 1.0):
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


def markov_entropy(stay):
    # stationary symmetric chain: entropy rate equals h(stay)
    return binary_entropy(stay)


def token_from_signs(signs):
    """Little-endian bit string built character by character."""
    bits = "".join("1" if s > 0 else "0" for s in reversed(list(signs)))
    return int(bits, 2) if bits else 0


def shannon_entropy_bits(values):
    counts = np.array(list(Counter(values).values()), dtype=float)
    from scipy.stats import entropy

    return float(entropy(counts, base=2))


def dct2_ortho(block):
    return fft.dctn(block, type=2, norm="ortho")


def idct2_ortho(coeffs):
    return fft.idctn(coeffs, type=2, norm="ortho")


def softmax_attention_scalar(q, k, v, mask):
    """Row by row, key by key, with math.exp."""
    n, d = len(q), len(q[0])
    out = []
    for i in range(n):
        weights = []
        for j in range(n):
            if mask[i][j] == -math.inf:
                weights.append(0.0)
                continue
            s = sum(q[i][c] * k[j][c] for c in range(d)) / math.sqrt(d)
            weights.append(math.exp(s))
        z = sum(weights)
        out.append([sum(weights[j] * v[j][c] for j in range(n)) / z for c in range(len(v[0]))])
    return np.array(out)


def sobel_weights(img):
    gray = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
    ky = kx.T
    gx = ndimage.correlate(gray, kx, mode="constant", cval=0.0)
    gy = ndimage.correlate(gray, ky, mode="constant", cval=0.0)
    mag = np.hypot(gx, gy)
    return 2.0 * (1.0 / (1.0 + np.exp(-5.0 * mag))) + 1.0


def _gauss_2d(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(x, y, win, c1, c2):
    f = lambda a: signal.convolve2d(a, win[::-1, ::-1], mode="valid")  # noqa: E731
    mx, my = f(x), f(y)
    vx = f(x * x) - mx * mx
    vy = f(y * y) - my * my
    cxy = f(x * y) - mx * my
    cs = (2 * cxy + c2) / (vx + vy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return float((lum * cs).mean()), float(cs.mean())


def _downsample(a):
    # 2x2 average with zero padding on odd sides (count_include_pad pooling)
    ph, pw = a.shape[0] % 2, a.shape[1] % 2
    a = np.pad(a, ((ph, ph), (pw, pw)))
    H, W = (a.shape[0] // 2) * 2, (a.shape[1] // 2) * 2
    a = a[:H, :W]
    return a.reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))


def ms_ssim_reference(a, b, weights=(0.0448, 0.2856, 0.3001, 0.2363, 0.1333)):
    """MS-SSIM on [-0.5, 0.5] images, evaluated channel by channel."""
    win = _gauss_2d()
    c1, c2 = 0.01**2, 0.03**2
    side = min(a.shape[:2])
    n = 1
    while n < 5 and side >= 11 * 2**n:
        n += 1
    w = np.array(weights[:n]) / sum(weights[:n])
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch] + 0.5, b[..., ch] + 0.5
        acc = 1.0
        for level in range(n):
            s, cs = _ssim_channel(x, y, win, c1, c2)
            term = s if level == n - 1 else cs
            acc *= max(term, 0.0) ** w[level]
            x, y = _downsample(x), _downsample(y)
        vals.append(acc)
    return float(np.mean(vals))


def ssim_reference(a, b):
    win = _gauss_2d()
    return float(np.mean([
        _ssim_channel(a[..., c] + 0.5, b[..., c] + 0.5, win, 0.01**2, 0.03**2)[0]
        for c in range(a.shape[2])
    ]))


class CountingModel:
    """Dictionary-backed Laplace counter keyed on the full context tuple."""

    def __init__(self, order):
        self.order = order
        self.counts = {}

    def key(self, pos, partial, previous):
        history = tuple((partial >> j) & 1 for j in range(max(0, pos - self.order), pos))
        return (pos, history, (previous >> pos) & 1)

    def p1(self, key):
        n0, n1 = self.counts.get(key, (0, 0))
        return (n1 + 1) / (n0 + n1 + 2)

    def update(self, key, bit):
        n0, n1 = self.counts.get(key, (0, 0))
        self.counts[key] = (n0 + (bit == 0), n1 + (bit == 1))


def ideal_code_length(tokens, bits, order):
    """Sum of -log2 p under exact (unquantized) Laplace probabilities."""
    model = CountingModel(order)
    total = 0.0
    previous = 0
    for tok in tokens:
        partial = 0
        for b in range(bits):
            key = model.key(b, partial, previous)
            p = model.p1(key)
            bit = (tok >> b) & 1
            total -= math.log2(p if bit else 1 - p)
            model.update(key, bit)
            partial |= bit << b
        previous = tok
    return total
