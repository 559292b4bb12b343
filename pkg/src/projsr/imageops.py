"""Image protocol layer: color conversion, bicubic resize, PSNR/SSIM.

Images are 2D float64 arrays ("luminance images") with values in [0, 1].
The resize follows the Matlab imresize convention: Keys cubic kernel
(a = -0.5), and when downscaling the kernel support is widened by the
inverse scale so the image is antialiased. Quality metrics shave a border
before comparing, because SR methods are unreliable near edges; the same
psnr/ssim code path is used everywhere a score is computed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.signal import fftconvolve

from .errors import ConfigError, ShapeError

# BT.601 studio-swing RGB (in [0,1]) -> YCbCr (in 8-bit scale) transform.
_YCBCR_MATRIX = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
)
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])
_YCBCR_INVERSE = np.linalg.inv(_YCBCR_MATRIX)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """8-bit RGB (h,w,3) to YCbCr, all three planes scaled to [0,1]."""
    x = rgb.astype(np.float64) / 255.0
    ycc = x @ _YCBCR_MATRIX.T + _YCBCR_OFFSET
    return ycc / 255.0


def rgb_to_ycbcr_luma(rgb: np.ndarray) -> np.ndarray:
    """Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255 with RGB in [0,1]."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"expected (h,w,3) RGB image, got {rgb.shape}")
    return rgb_to_ycbcr(rgb)[:, :, 0]


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    """Inverse of rgb_to_ycbcr; returns 8-bit RGB."""
    x = (ycc * 255.0 - _YCBCR_OFFSET) @ _YCBCR_INVERSE.T
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def _cubic(x: np.ndarray) -> np.ndarray:
    """Keys cubic-convolution kernel with a = -0.5, support width 4."""
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = 1.5 * ax3 - 2.5 * ax2 + 1.0
    far = -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    return np.where(ax <= 1.0, near, np.where(ax <= 2.0, far, 0.0))


def _contributions(in_len: int, out_len: int, scale: float, antialias: bool):
    """Per-output-pixel tap weights and (edge-replicated) source indices."""
    if scale < 1.0 and antialias:
        width = 4.0 / scale
        def kernel(x):
            return scale * _cubic(scale * x)
    else:
        width = 4.0
        kernel = _cubic
    u = (np.arange(out_len, dtype=np.float64) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2.0).astype(np.int64)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)
    wts = kernel(u[:, None] - idx)
    wts /= wts.sum(axis=1, keepdims=True)
    return wts, np.clip(idx, 0, in_len - 1)


def _resize_rows(img: np.ndarray, wts: np.ndarray, idx: np.ndarray) -> np.ndarray:
    out = np.zeros((wts.shape[0], img.shape[1]))
    for p in range(wts.shape[1]):
        out += wts[:, p : p + 1] * img[idx[:, p], :]
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def bicubic_resize(img: np.ndarray, factor: float, *, clamp: bool = True) -> np.ndarray:
    """Resize by `factor`; output dims are round(dim * factor).

    Downscaling widens the kernel by 1/factor (antialiasing). Edges are
    handled by replication. With clamp the result is clipped to [0, 1].
    """
    if not factor > 0:
        raise ConfigError(f"resize factor must be positive, got {factor}")
    if img.ndim != 2:
        raise ShapeError(f"expected a 2-d image, got shape {img.shape}")
    h, w = img.shape
    out_h = _round_half_up(h * factor)
    out_w = _round_half_up(w * factor)
    wts, idx = _contributions(h, out_h, factor, antialias=True)
    work = _resize_rows(np.asarray(img, dtype=np.float64), wts, idx)
    wts, idx = _contributions(w, out_w, factor, antialias=True)
    out = _resize_rows(work.T, wts, idx).T
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def modcrop(img: np.ndarray, scale: int) -> np.ndarray:
    """Crop to the largest dims divisible by scale."""
    if scale < 1:
        raise ConfigError(f"scale must be >= 1, got {scale}")
    h, w = img.shape[:2]
    return img[: h - h % scale, : w - w % scale]


def _shaved(a: np.ndarray, b: np.ndarray, shave: int):
    if a.shape != b.shape:
        raise ShapeError(f"image dims differ: {a.shape} vs {b.shape}")
    if shave < 0:
        raise ConfigError(f"shave must be >= 0, got {shave}")
    if shave:
        if min(a.shape) <= 2 * shave:
            raise ShapeError(
                f"shave={shave} leaves no pixels on a {a.shape} image"
            )
        a = a[shave:-shave, shave:-shave]
        b = b[shave:-shave, shave:-shave]
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """10*log10(1/MSE) on [0,1] pixels; identical images give math.inf."""
    a, b = _shaved(a, b, shave)
    mse = float(np.mean(np.square(a - b, dtype=np.float64)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """Mean local SSIM, 11x11 Gaussian window sigma=1.5, K1=.01, K2=.03, L=1.

    Local statistics come from 'valid'-mode filtering, so only windows
    fully inside the (shaved) images contribute.
    """
    a, b = _shaved(a, b, shave)
    if min(a.shape) < 11:
        raise ShapeError(f"image {a.shape} too small for an 11x11 ssim window")
    win = _gaussian_window()
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2

    def f(x):
        return fftconvolve(x, win, mode="valid")

    mu1 = f(a)
    mu2 = f(b)
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    mu12 = mu1 * mu2
    sigma1_sq = f(a * a) - mu1_sq
    sigma2_sq = f(b * b) - mu2_sq
    sigma12 = f(a * b) - mu12
    num = (2.0 * mu12 + c1) * (2.0 * sigma12 + c2)
    den = (mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    psnr_db: float
    ssim: float
    scale: int
    shave: int


def evaluate(gt: np.ndarray, sr: np.ndarray, scale: int, shave: int | None = None) -> EvalReport:
    """Score an SR result against ground truth with the shared shave protocol.

    The default shave equals the scale, the convention the reference
    bicubic baselines are computed under.
    """
    if shave is None:
        shave = scale
    return EvalReport(psnr(gt, sr, shave), ssim(gt, sr, shave), scale, shave)


# --- file I/O -------------------------------------------------------------

def load_image(path: str | Path) -> np.ndarray:
    """PNG (or other Pillow-readable) image as uint8; (h,w) gray or (h,w,3) RGB."""
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_luma(path: str | Path) -> np.ndarray:
    """Luminance image in [0,1] from a gray or color file."""
    arr = load_image(path)
    if arr.ndim == 2:
        return arr.astype(np.float64) / 255.0
    return rgb_to_ycbcr_luma(arr)


def save_gray(path: str | Path, img: np.ndarray) -> None:
    """Write a [0,1] luminance image as 8-bit grayscale PNG."""
    u8 = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path)


def save_rgb(path: str | Path, rgb: np.ndarray) -> None:
    Image.fromarray(rgb.astype(np.uint8), mode="RGB").save(path)


# Golden vectors: 8-byte magic, uint32 version, uint32 h, uint32 w,
# float64 factor, then h*w little-endian float64 values in C order.
_GOLDEN_MAGIC = b"PROJSRGV"


def write_golden(path: str | Path, arr: np.ndarray, factor: float) -> None:
    h, w = arr.shape
    blob = _GOLDEN_MAGIC + struct.pack("<III", 1, h, w) + struct.pack("<d", factor)
    blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(blob)


def read_golden(path: str | Path) -> tuple[np.ndarray, float]:
    blob = Path(path).read_bytes()
    if blob[:8] != _GOLDEN_MAGIC:
        raise ConfigError("not a golden-vector file")
    version, h, w = struct.unpack_from("<III", blob, 8)
    if version != 1:
        raise ConfigError(f"unsupported golden-vector version {version}")
    (factor,) = struct.unpack_from("<d", blob, 20)
    arr = np.frombuffer(blob, "<f8", count=h * w, offset=28).reshape(h, w)
    return arr.copy(), factor
