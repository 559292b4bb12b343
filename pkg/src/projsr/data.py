"""Training-pair construction.

A training sample is a pair of aligned 41x41 luminance patches: the input
is a bicubically degraded-and-restored crop, the target is the residual
against the ground-truth crop, so input + target reproduces the original
crop bitwise. External pairs come from a corpus of images; internal pairs
come from the test image itself, re-degraded across an image pyramid.

Patch grids are anchored at (0,0) with a fixed stride, which makes the
pair count exactly

    (floor((h - size) / stride) + 1) * (floor((w - size) / stride) + 1)

per image; trailing pixels that do not fit a full patch are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NoExamplesError, ShapeError
from .imageops import bicubic_resize, modcrop

PATCH_SIZE = 41

SOURCE_EXTERNAL = "external"
SOURCE_INTERNAL = "internal"


@dataclass
class PatchPair:
    """Aligned (input, residual-target) patches with provenance."""

    input: np.ndarray
    target: np.ndarray
    scale: int
    source: str = SOURCE_EXTERNAL
    transform_id: int = 0

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise ShapeError(
                f"input/target dims differ: {self.input.shape} vs {self.target.shape}"
            )


@dataclass(frozen=True)
class PyramidSpec:
    """Internal-example extraction parameters.

    scales lists the pyramid levels as fractions of the test image, in
    descending order starting at 1.0 (the image itself); levels below 1.0
    are only used when scale_augmentation is on.
    """

    scales: tuple[float, ...] = (1.0, 0.9, 0.8, 0.7, 0.6)
    stride: int = 20
    scale_augmentation: bool = False

    def __post_init__(self):
        if not self.scales:
            raise ConfigError("pyramid needs at least one scale")
        if self.scales[0] != 1.0:
            raise ConfigError("pyramid scales must start at 1.0 (the image itself)")
        if any(s <= 0 or s > 1 for s in self.scales):
            raise ConfigError(f"pyramid scales must lie in (0, 1], got {self.scales}")
        if list(self.scales) != sorted(self.scales, reverse=True):
            raise ConfigError("pyramid scales must be descending")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")

    def level_scales(self) -> tuple[float, ...]:
        return self.scales if self.scale_augmentation else self.scales[:1]


def patch_grid_count(h: int, w: int, size: int, stride: int) -> int:
    """Number of grid-aligned patches; 0 when the image is too small."""
    if h < size or w < size:
        return 0
    return ((h - size) // stride + 1) * ((w - size) // stride + 1)


def extract_patches(
    hr: np.ndarray,
    lr_upscaled: np.ndarray,
    size: int = PATCH_SIZE,
    stride: int = 1,
    *,
    scale: int = 0,
    source: str = SOURCE_EXTERNAL,
) -> list[PatchPair]:
    """Cut aligned patch pairs on a (0,0)-anchored grid.

    Returns an empty list when the image is smaller than the patch size.
    """
    if hr.shape != lr_upscaled.shape:
        raise ShapeError(f"image dims differ: {hr.shape} vs {lr_upscaled.shape}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    h, w = hr.shape
    pairs = []
    for y in range(0, h - size + 1, stride):
        for x in range(0, w - size + 1, stride):
            inp = lr_upscaled[y : y + size, x : x + size].copy()
            tgt = hr[y : y + size, x : x + size] - inp
            pairs.append(PatchPair(inp, tgt, scale, source))
    return pairs


def dihedral(patch: np.ndarray, transform_id: int, *, strict: bool = True) -> np.ndarray:
    """One of the 8 symmetries of the square: rot90^k, then optional fliplr.

    transform_id 0..3 are counterclockwise quarter turns, 4..7 add a
    horizontal flip. With strict, odd quarter turns of non-square arrays
    raise; pass strict=False to allow rectangles (their dims transpose).
    """
    if not 0 <= transform_id <= 7:
        raise ConfigError(f"transform_id must be 0..7, got {transform_id}")
    k = transform_id & 3
    if strict and k % 2 == 1 and patch.shape[0] != patch.shape[1]:
        raise ShapeError(
            f"odd rotation of a non-square {patch.shape} patch changes its dims"
        )
    out = np.rot90(patch, k)
    if transform_id >= 4:
        out = np.fliplr(out)
    return np.ascontiguousarray(out)


def dihedral_inverse(patch: np.ndarray, transform_id: int, *, strict: bool = True) -> np.ndarray:
    """Undo dihedral(.., transform_id): dihedral_inverse(dihedral(p,t),t) == p."""
    if not 0 <= transform_id <= 7:
        raise ConfigError(f"transform_id must be 0..7, got {transform_id}")
    k = transform_id & 3
    out = np.fliplr(patch) if transform_id >= 4 else patch
    if strict and k % 2 == 1 and out.shape[0] != out.shape[1]:
        raise ShapeError(
            f"odd rotation of a non-square {patch.shape} patch changes its dims"
        )
    return np.ascontiguousarray(np.rot90(out, -k))


def degrade_pair(hr: np.ndarray, scale: int) -> tuple[np.ndarray, np.ndarray]:
    """Modcrop, downscale by 1/scale, upscale back; returns (hr_crop, input).

    The re-upscaled input is left unclamped so it matches the tensor the
    network sees at inference time bit for bit.
    """
    hr_crop = modcrop(hr, scale)
    lr = bicubic_resize(hr_crop, 1.0 / scale)
    return hr_crop, bicubic_resize(lr, float(scale), clamp=False)


def build_external_set(
    hr_images: list[np.ndarray],
    scales: tuple[int, ...] = (2, 3, 4),
    stride: int = PATCH_SIZE,
    augment: bool = True,
    seed: int = 0,
) -> list[PatchPair]:
    """Multi-scale external training pairs, deterministic per seed.

    Every image is degraded at every scale; with augment each pair gets a
    random dihedral transform (recorded in transform_id).
    """
    if not hr_images:
        raise ConfigError("external corpus is empty")
    rng = np.random.default_rng(seed)
    pairs = []
    for hr in hr_images:
        for s in scales:
            hr_crop, inp = degrade_pair(hr, s)
            for pair in extract_patches(hr_crop, inp, stride=stride, scale=s):
                if augment:
                    t = int(rng.integers(8))
                    if t:
                        pair = PatchPair(
                            dihedral(pair.input, t),
                            dihedral(pair.target, t),
                            pair.scale,
                            pair.source,
                            t,
                        )
                pairs.append(pair)
    return pairs


def extract_internal_examples(
    lr: np.ndarray, spec: PyramidSpec, scale: int
) -> list[PatchPair]:
    """Pairs manufactured from the test image's own pyramid.

    Each pyramid level of the input image is treated as ground truth and
    synthetically re-degraded by the target scale. Raises NoExamplesError
    when no level is large enough for a single patch.
    """
    pairs = []
    for s in spec.level_scales():
        level = lr if s == 1.0 else bicubic_resize(lr, s)
        level_crop, inp = degrade_pair(level, scale)
        pairs.extend(
            extract_patches(
                level_crop, inp, stride=spec.stride, scale=scale,
                source=SOURCE_INTERNAL,
            )
        )
    if not pairs:
        raise NoExamplesError(
            f"no internal examples: image {lr.shape} yields no {PATCH_SIZE}x"
            f"{PATCH_SIZE} patches at any pyramid level"
        )
    return pairs


def tune_stride(
    h: int, w: int, spec: PyramidSpec, scale: int, target_pairs: int = 10_000
) -> int:
    """Largest stride whose pyramid yields at least target_pairs examples.

    Falls back to stride 1 when even that cannot reach the target (small
    images). Counting mirrors extract_internal_examples exactly.
    """
    def total(stride: int) -> int:
        n = 0
        for s in spec.level_scales():
            lh = h if s == 1.0 else int(np.floor(h * s + 0.5))
            lw = w if s == 1.0 else int(np.floor(w * s + 0.5))
            n += patch_grid_count(lh - lh % scale, lw - lw % scale, PATCH_SIZE, stride)
        return n

    for stride in range(spec.stride, 1, -1):
        if total(stride) >= target_pairs:
            return stride
    return 1
