"""Synthetic textured test images.

Deterministic generators for the toy experiments: oriented gratings,
plaids, soft checkerboards, rings, tiled motifs, dot grids, zigzags and
smoothed noise. Values are kept inside [0.1, 0.9] so bicubic overshoot
rarely clips, and most spectral content sits where a x2 downscale loses
detail a small model can win back.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

VALUE_LO = 0.1
VALUE_HI = 0.9

TEXTURE_KINDS = (
    "gratings",
    "plaid",
    "checker",
    "rings",
    "motif",
    "dots",
    "zigzag",
    "blobs",
    "waves",
)


def _normalize(img: np.ndarray, lo: float = VALUE_LO, hi: float = VALUE_HI) -> np.ndarray:
    mn, mx = float(img.min()), float(img.max())
    if mx - mn < 1e-12:
        return np.full_like(img, (lo + hi) / 2.0)
    return lo + (hi - lo) * (img - mn) / (mx - mn)


def _grid(h: int, w: int):
    return np.mgrid[0:h, 0:w].astype(np.float64)


def make_texture(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """One (size, size) float64 texture in [0.1, 0.9]."""
    h = w = size
    yy, xx = _grid(h, w)
    if kind == "gratings":
        img = np.zeros((h, w))
        for _ in range(3):
            f = rng.uniform(0.03, 0.12)
            theta = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            img += rng.uniform(0.4, 1.0) * np.sin(
                2 * np.pi * f * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
            )
    elif kind == "plaid":
        fx, fy = rng.uniform(0.04, 0.12, size=2)
        img = np.sin(2 * np.pi * fx * xx) + np.sin(2 * np.pi * fy * yy)
        img += 0.5 * np.sin(2 * np.pi * fx * xx) * np.sin(2 * np.pi * fy * yy)
    elif kind == "checker":
        fx, fy = rng.uniform(0.05, 0.11, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img = np.tanh(
            2.5 * np.sin(2 * np.pi * fx * xx + phase) * np.sin(2 * np.pi * fy * yy)
        )
    elif kind == "rings":
        cy, cx = rng.uniform(0.2, 0.8, size=2) * size
        r = np.hypot(yy - cy, xx - cx)
        img = np.sin(2 * np.pi * rng.uniform(0.04, 0.10) * r + rng.uniform(0, 6))
    elif kind == "motif":
        img = periodic_motif(size, int(rng.integers(12, 24)), rng)
    elif kind == "dots":
        period = int(rng.integers(8, 16))
        sigma = period * rng.uniform(0.18, 0.3)
        img = np.zeros((h, w))
        jitter = rng.uniform(-1.5, 1.5, size=(2, h // period + 2, w // period + 2))
        for gy in range(h // period + 2):
            for gx in range(w // period + 2):
                cy = gy * period + jitter[0, gy, gx]
                cx = gx * period + jitter[1, gy, gx]
                img += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    elif kind == "zigzag":
        f = rng.uniform(0.04, 0.1)
        theta = rng.uniform(0, np.pi)
        t = f * (np.cos(theta) * xx + np.sin(theta) * yy) + rng.uniform(0, 1)
        img = 2.0 * np.abs(t - np.floor(t) - 0.5)
    elif kind == "blobs":
        img = gaussian_filter(
            rng.standard_normal((h, w)), sigma=rng.uniform(1.5, 3.0)
        )
    elif kind == "waves":
        f = rng.uniform(0.04, 0.1)
        g = rng.uniform(0.01, 0.03)
        amp = rng.uniform(3, 9)
        img = np.sin(2 * np.pi * f * (xx + amp * np.sin(2 * np.pi * g * yy)))
    else:
        raise ValueError(f"unknown texture kind {kind!r}")
    return _normalize(img)


def periodic_motif(size: int, motif: int, rng: np.random.Generator) -> np.ndarray:
    """A smooth motif tiled periodically over the whole image."""
    base = rng.standard_normal((motif, motif))
    reps = size // motif + 1
    tiled = np.tile(base, (reps, reps))[:size, :size]
    return gaussian_filter(tiled, sigma=1.2, mode="wrap")


def periodic_motif_image(size: int = 1024, motif: int = 16, seed: int = 0) -> np.ndarray:
    """Strongly self-similar test image: one motif tiled edge to edge."""
    rng = np.random.default_rng(seed)
    return _normalize(periodic_motif(size, motif, rng))


def make_corpus(
    count: int, size: int, seed: int, kinds: tuple[str, ...] = TEXTURE_KINDS
) -> list[np.ndarray]:
    """Deterministic list of textures, cycling through the kinds."""
    images = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        images.append(make_texture(kinds[i % len(kinds)], size, rng))
    return images
