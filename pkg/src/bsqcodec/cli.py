"""Command-line interface.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 malformed input
(bad container, indivisible image size, weights that do not fit).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import struct
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import container, metrics, token_stats
from .errors import CodecError, FormatError, ShapeError
from .fileio import atomic_write, decode_ppm, encode_ppm
from .grid import image_from_bytes, image_to_bytes
from .patch_codec import detokenize, tokenize
from .weights import ModelConfig, ModelWeights, init_weights

log = logging.getLogger("bsqcodec")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4

WEIGHTS_ENV = "GANC_WEIGHTS"
MODES = {"raw": container.MODE_RAW, "arith": container.MODE_ARITH}
DEFAULTS = {"patch": 8, "bits": 16, "mode": "raw", "order": 1, "weights": None, "jpeg_fallback": False}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class CodecConfig:
    patch: Optional[int]
    bits: Optional[int]
    mode: str
    order: int
    weights_path: str
    enable_jpeg_fallback: bool


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {value!r}")


def resolve_config(args: argparse.Namespace) -> CodecConfig:
    """Merge flags over the config file; patch/bits left unset defer to the weights."""
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}

    def pick(key):
        flag = getattr(args, key, None)
        if flag is not None:
            return flag
        return file_values.get(key)

    try:
        patch = pick("patch")
        bits = pick("bits")
        patch = int(patch) if patch is not None else None
        bits = int(bits) if bits is not None else None
        mode = pick("mode") or DEFAULTS["mode"]
        order = int(pick("order") if pick("order") is not None else DEFAULTS["order"])
        fallback = _as_bool(pick("jpeg_fallback") or False)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if mode not in MODES:
        raise UsageError(f"mode must be one of {sorted(MODES)}, got {mode!r}")
    if order not in (0, 1, 2):
        raise UsageError(f"order must be 0, 1 or 2, got {order}")
    if bits is not None and not 1 <= bits <= 64:
        raise UsageError(f"bits must be in [1, 64], got {bits}")
    weights = pick("weights") or os.environ.get(WEIGHTS_ENV)
    if not weights:
        raise UsageError(f"no weights given: use --weights or set {WEIGHTS_ENV}")
    return CodecConfig(patch, bits, mode, order, weights, fallback)


def load_weights(cfg: CodecConfig) -> tuple[ModelWeights, ModelConfig]:
    weights = ModelWeights.load(cfg.weights_path)
    model_cfg = ModelConfig.from_weights(weights)
    if cfg.patch is not None and cfg.patch != model_cfg.patch:
        raise ShapeError(f"--patch {cfg.patch} but weights use patch {model_cfg.patch}")
    if cfg.bits is not None and cfg.bits != model_cfg.bits:
        raise ShapeError(f"--bits {cfg.bits} but weights produce {model_cfg.bits}-bit tokens")
    return weights, model_cfg


def read_image(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P6":
        return image_from_bytes(decode_ppm(data))
    try:
        import io

        from PIL import Image
    except ImportError:
        raise FormatError(f"{path}: not a binary PPM and Pillow is not installed") from None
    try:
        with Image.open(io.BytesIO(data)) as im:
            return image_from_bytes(np.array(im.convert("RGB")))
    except OSError as exc:
        raise FormatError(f"{path}: unreadable image ({exc})") from None


def _check_divisible(img: np.ndarray, patch: int) -> None:
    H, W, _ = img.shape
    if H % patch or W % patch:
        raise ShapeError(f"image size {H}x{W} is not divisible by patch size {patch}")


def encode_image(img: np.ndarray, weights: ModelWeights, model_cfg: ModelConfig, cfg: CodecConfig) -> tuple[bytes, object]:
    """Compress ``img``; returns the container bytes and the token grid."""
    _check_divisible(img, model_cfg.patch)
    grid = tokenize(img, weights, model_cfg)
    body = container.encode_body(grid, model_cfg.patch, MODES[cfg.mode], cfg.order)
    jpeg = None
    if cfg.enable_jpeg_fallback:
        encoder = container.pillow_jpeg_encoder(img)
        if encoder is None:
            log.warning("JPEG fallback requested but Pillow is not installed; writing none")
        H, W, _ = img.shape
        jpeg = container.jpeg_fallback_select(len(body), H, W, encoder)
    jpeg = jpeg or b""
    return body + struct.pack("<I", len(jpeg)) + jpeg, grid


def decode_container(data: bytes, weights: ModelWeights, model_cfg: ModelConfig) -> np.ndarray:
    decoded = container.deserialize(data)
    hdr = decoded.header
    if hdr.patch != model_cfg.patch or hdr.bits != model_cfg.bits:
        raise ShapeError(
            f"container uses patch {hdr.patch} / {hdr.bits} bits, "
            f"weights use patch {model_cfg.patch} / {model_cfg.bits} bits"
        )
    neural = detokenize(decoded.grid, weights, model_cfg)
    if decoded.jpeg is None:
        return neural
    try:
        base = container.pillow_jpeg_decode(decoded.jpeg)
    except Exception as exc:
        log.warning("error loading JPEG fallback: %s; using neural reconstruction only", exc)
        return neural
    if base is None:
        log.warning("container has a JPEG fallback but Pillow is not installed; skipping blend")
        return neural
    if base.shape != neural.shape:
        log.warning("JPEG fallback is %s, expected %s; skipping blend", base.shape, neural.shape)
        return neural
    return container.blend_decode(neural, base)


def size_summary(size: int, height: int, width: int) -> dict[str, float]:
    return {
        "size_bytes": size,
        "bpp": size * 8 / (height * width),
        "compression_ratio": height * width * 3 / size,
    }


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return f"{value:.4f}"
    return str(value)


def format_lines(values: dict) -> str:
    return "".join(f"{k}: {_fmt(v)}\n" for k, v in values.items())


def cmd_encode(args) -> int:
    cfg = resolve_config(args)
    img = read_image(args.input)
    weights, model_cfg = load_weights(cfg)
    data, _ = encode_image(img, weights, model_cfg, cfg)
    atomic_write(args.output, data)
    H, W, _ = img.shape
    sys.stdout.write(format_lines(size_summary(len(data), H, W)))
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = resolve_config(args)
    with open(args.input, "rb") as fh:
        data = fh.read()
    weights, model_cfg = load_weights(cfg)
    img = decode_container(data, weights, model_cfg)
    atomic_write(args.output, encode_ppm(image_to_bytes(img)))
    return EXIT_OK


def roundtrip_report(img: np.ndarray, weights: ModelWeights, model_cfg: ModelConfig, cfg: CodecConfig) -> dict:
    data, grid = encode_image(img, weights, model_cfg, cfg)
    exact = container.deserialize(data).grid == grid
    recon = decode_container(data, weights, model_cfg)
    H, W, _ = img.shape
    report = {
        "psnr": metrics.psnr(recon, img),
        "ssim": metrics.ssim(recon, img) if min(H, W) >= metrics.SSIM_WINDOW else float("nan"),
        "ms_ssim": metrics.ms_ssim(recon, img) if min(H, W) >= metrics.SSIM_WINDOW else float("nan"),
        "edge_l1": metrics.edge_weighted_l1(recon, img),
        "yuv_loss": metrics.yuv_color_loss(recon, img),
    }
    report.update(size_summary(len(data), H, W))
    report["tokens"] = "exact" if exact else "MISMATCH"
    return report


def cmd_roundtrip(args) -> int:
    cfg = resolve_config(args)
    img = read_image(args.input)
    weights, model_cfg = load_weights(cfg)
    report = roundtrip_report(img, weights, model_cfg, cfg)
    text = format_lines(report)
    sys.stdout.write(text)
    if args.report:
        atomic_write(args.report, text.encode("utf-8"))
    if report["tokens"] != "exact":
        log.error("token payload did not survive the container round trip")
        return EXIT_FORMAT
    return EXIT_OK


def cmd_stats(args) -> int:
    reports = []
    grids = []
    status = EXIT_OK
    for path in args.containers:
        try:
            with open(path, "rb") as fh:
                decoded = container.deserialize(fh.read())
        except (CodecError, OSError) as exc:
            if not args.keep_going:
                raise
            log.warning("skipping %s: %s", path, exc)
            continue
        grids.append(decoded.grid)
        reports.append(token_stats.compute_stats(decoded.grid))
    summary: dict = {}
    if grids:
        try:
            summary["corpus_utilization"] = token_stats.corpus_utilization(grids)
        except CodecError as exc:
            log.warning("corpus utilization undefined: %s", exc)
    if len(reports) >= 3:
        corr = token_stats.correlation_matrix(reports)
        for i, a in enumerate(corr.columns):
            for j, b in enumerate(corr.columns):
                if j > i:
                    summary[f"corr_{a}_{b}"] = corr.values[i][j]
    for i, r in enumerate(reports):
        sys.stdout.write(
            f"{i}: entropy_bits={r.entropy_bits:.4f} unique_tokens={r.unique_tokens} "
            f"total_tokens={r.total_tokens} sparsity={r.sparsity:.6g} "
            f"mean_token_value={r.mean_token_value:.6g}\n"
        )
    for k, v in summary.items():
        sys.stdout.write(f"{k}: {'null' if v is None else f'{v:.6g}'}\n")
    if args.output:
        token_stats.export_report(reports, args.output, summary)
    return status


def cmd_init_weights(args) -> int:
    grid = None
    if args.grid:
        try:
            h, w = (int(v) for v in args.grid.lower().split("x"))
        except ValueError:
            raise UsageError(f"--grid must look like 32x32, got {args.grid!r}") from None
        grid = (h, w)
    try:
        cfg = ModelConfig(args.patch, args.latent_dim, args.bits, args.depth, args.heads)
    except ShapeError as exc:
        raise UsageError(str(exc)) from exc
    init_weights(cfg, seed=args.seed, grid=grid).save(args.output)
    return EXIT_OK


def _codec_flags(p: argparse.ArgumentParser, output: bool = True) -> None:
    p.add_argument("--patch", type=int, help="patch size (must match the weights)")
    p.add_argument("--bits", type=int, help="bits per token L (must match the weights)")
    p.add_argument("--mode", choices=sorted(MODES), help="payload coding (default raw)")
    p.add_argument("--order", type=int, choices=(0, 1, 2), help="context order for arith mode (default 1)")
    p.add_argument("--weights", help=f"GANW weights file (default ${WEIGHTS_ENV})")
    p.add_argument("--jpeg-fallback", dest="jpeg_fallback", action="store_true", default=None,
                   help="append a JPEG fallback when the size budget allows")
    p.add_argument("--config", help="key=value config file; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsqcodec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="compress a PPM image into a .gnc container")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _codec_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="reconstruct a PPM image from a .gnc container")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _codec_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("roundtrip", help="encode and decode in memory and report metrics")
    p.add_argument("input")
    p.add_argument("--report", help="also write the report to this file")
    _codec_flags(p)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("stats", help="token statistics over .gnc containers")
    p.add_argument("containers", nargs="+")
    p.add_argument("-o", "--output", help="write the CSV statistics report here")
    p.add_argument("--keep-going", action="store_true", help="skip unreadable containers")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("init-weights", help="write deterministic random weights")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--patch", type=int, default=DEFAULTS["patch"])
    p.add_argument("--bits", type=int, default=DEFAULTS["bits"])
    p.add_argument("--latent-dim", type=int, default=64)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", help="include a learned positional table for an HxW token grid")
    p.set_defaults(func=cmd_init_weights)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # messages from every bsqcodec module go to this invocation's stderr
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    pkg_log = logging.getLogger("bsqcodec")
    pkg_log.addHandler(handler)
    pkg_log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        return _dispatch(args)
    finally:
        pkg_log.removeHandler(handler)


def _dispatch(args) -> int:
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except OSError as exc:
        where = f": {exc.filename}" if exc.filename else ""
        log.error("I/O error%s: %s", where, exc.strerror or exc)
        return EXIT_IO
    except (CodecError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
