"""End-to-end super-resolution of a luminance image.

The network regresses the residual between the bicubically upscaled input
and the ground truth, so inference is: upscale, run the body, add. The
body output is added to the float64 upscale, and clamping to [0,1]
happens once at the very end; with an all-zero body the pipeline output
is therefore bitwise equal to the plain bicubic upscale.

Enhanced prediction averages the eight dihedral variants of the input.
Because the bicubic upscale commutes with rotations and flips, it is
computed once and transformed, rather than recomputed per branch; the
branch average is accumulated pairwise in a fixed order, which keeps the
average of identical branches exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .checkpoint import Checkpoint
from .data import dihedral, dihedral_inverse
from .errors import ConfigError, ShapeError
from .imageops import bicubic_resize

ADAPT_MODES = ("none", "finetune", "select", "finetune+augment")


@dataclass
class SROptions:
    scale: int = 2
    cascade: bool = False
    cascade_factors: tuple[int, ...] | None = None
    back_projection_iters: int = 0
    enhanced: bool = False
    adaptation: str = "none"
    tile_pixels: int = 2_000_000  # tile the body pass above this many pixels
    tile_size: int = 512

    def __post_init__(self):
        if self.scale < 2:
            raise ConfigError(f"scale must be >= 2, got {self.scale}")
        if self.back_projection_iters < 0:
            raise ConfigError("back_projection_iters must be >= 0")
        if self.adaptation not in ADAPT_MODES:
            raise ConfigError(
                f"unknown adaptation mode {self.adaptation!r}; "
                f"expected one of {ADAPT_MODES}"
            )


def as_network(model) -> model_mod.Network:
    if isinstance(model, Checkpoint):
        return model.network()
    if isinstance(model, model_mod.Network):
        return model
    raise ConfigError(f"expected a Checkpoint or Network, got {type(model)!r}")


def _body(net: model_mod.Network, up: np.ndarray, opts: SROptions) -> np.ndarray:
    """Network body output (before the global skip) on a full plane, in f64."""
    halo = net.spec.receptive_radius()
    x = up.astype(net.dtype)
    if up.size <= opts.tile_pixels:
        return _body_plane(net, x)
    h, w = up.shape
    tile = opts.tile_size
    out = np.empty((h, w), dtype=np.float64)
    for y0 in range(0, h, tile):
        for x0 in range(0, w, tile):
            ya, xa = max(0, y0 - halo), max(0, x0 - halo)
            yb, xb = min(h, y0 + tile + halo), min(w, x0 + tile + halo)
            sub = _body_plane(net, np.ascontiguousarray(x[ya:yb, xa:xb]))
            out[y0 : min(h, y0 + tile), x0 : min(w, x0 + tile)] = sub[
                y0 - ya : y0 - ya + min(tile, h - y0),
                x0 - xa : x0 - xa + min(tile, w - x0),
            ]
    return out


def _body_plane(net: model_mod.Network, plane32: np.ndarray) -> np.ndarray:
    x = plane32[None, None]
    y = model_mod.forward(net, x)[0, 0]
    if net.spec.global_residual:
        # forward adds the input back; recover the pure body term
        y = y - x[0, 0]
    return y.astype(np.float64)


def superresolve(model, lr: np.ndarray, opts: SROptions, *, clamp: bool = True) -> np.ndarray:
    """Single-pass SR by opts.scale: bicubic upscale + learned residual."""
    if lr.size == 0:
        raise ShapeError("input image is empty")
    net = as_network(model)
    up = bicubic_resize(lr, float(opts.scale), clamp=False)
    out = up + _body(net, up, opts)
    return np.clip(out, 0.0, 1.0) if clamp else out


def plan_cascade(total_factor: int, supported: tuple[int, ...] = (2, 3)) -> list[int]:
    """Decompose a magnification into supported per-pass factors.

    A directly supported factor is a single pass; otherwise the total is
    factored over the supported set (smallest factors first).
    """
    if total_factor in supported:
        return [total_factor]
    rest = total_factor
    factors = []
    for f in sorted(supported):
        if f < 2:
            raise ConfigError(f"unsupported cascade base factor {f}")
        while rest % f == 0:
            factors.append(f)
            rest //= f
    if rest != 1:
        raise ConfigError(
            f"magnification {total_factor} is not a product of factors {supported}"
        )
    return factors


def cascade(model, lr: np.ndarray, total_factor: int, *, factors: list[int] | None = None,
            opts: SROptions | None = None, clamp: bool = True) -> np.ndarray:
    """Repeated SR passes whose factors multiply to total_factor.

    Intermediate stages are not clamped; only the final output is, so
    clipping bias does not compound across stages.
    """
    if factors is None:
        factors = plan_cascade(total_factor)
    if int(np.prod(factors)) != total_factor:
        raise ConfigError(f"factors {factors} do not multiply to {total_factor}")
    out = lr
    for i, f in enumerate(factors):
        stage = SROptions(scale=f) if opts is None else _with_scale(opts, f)
        out = superresolve(model, out, stage, clamp=clamp and i == len(factors) - 1)
    return out


def _with_scale(opts: SROptions, scale: int) -> SROptions:
    return SROptions(
        scale=scale,
        back_projection_iters=0,
        enhanced=False,
        adaptation="none",
        tile_pixels=opts.tile_pixels,
        tile_size=opts.tile_size,
    )


def back_project(hr: np.ndarray, lr: np.ndarray, scale: int, iters: int = 20) -> np.ndarray:
    """Iteratively push the HR estimate toward consistency with the input.

    hr <- clamp(hr + up(lr - down(hr))) with the same antialiased bicubic
    in both directions.
    """
    expected = (lr.shape[0] * scale, lr.shape[1] * scale)
    if hr.shape != expected:
        raise ShapeError(f"hr dims {hr.shape} != scale*lr dims {expected}")
    out = np.asarray(hr, dtype=np.float64)
    for _ in range(iters):
        down = bicubic_resize(out, 1.0 / scale, clamp=False)
        out = out + bicubic_resize(lr - down, float(scale), clamp=False)
        np.clip(out, 0.0, 1.0, out=out)
    return out


def enhanced_predict(model, lr: np.ndarray, opts: SROptions) -> np.ndarray:
    """Average the SR results over the 8 dihedral transforms of the input.

    The upscale is computed once and transformed (it commutes with the
    group), each branch runs the body on the transformed plane, and the
    branch results are averaged pairwise in transform order.
    """
    net = as_network(model)
    if opts.cascade:
        branches = [
            dihedral_inverse(
                cascade(model, dihedral(lr, t, strict=False), opts.scale, opts=opts),
                t, strict=False,
            )
            for t in range(8)
        ]
    else:
        up = bicubic_resize(lr, float(opts.scale), clamp=False)
        branches = []
        for t in range(8):
            upt = dihedral(up, t, strict=False)
            y = np.clip(upt + _body(net, upt, opts), 0.0, 1.0)
            branches.append(dihedral_inverse(y, t, strict=False))
    pairs = [branches[i] + branches[i + 1] for i in range(0, 8, 2)]
    quads = [pairs[0] + pairs[1], pairs[2] + pairs[3]]
    return (quads[0] + quads[1]) / 8.0


def run_sr(model, lr: np.ndarray, opts: SROptions) -> np.ndarray:
    """Compose the inference-time options: (cascade | enhanced | plain) + BP."""
    if opts.enhanced:
        out = enhanced_predict(model, lr, opts)
    elif opts.cascade:
        out = cascade(model, lr, opts.scale, factors=list(opts.cascade_factors)
                      if opts.cascade_factors else None, opts=opts)
    else:
        out = superresolve(model, lr, opts)
    if opts.back_projection_iters > 0:
        out = back_project(out, lr, opts.scale, opts.back_projection_iters)
    return out


def sr_with_models(models: list, lr: np.ndarray, opts: SROptions) -> np.ndarray:
    """Pixelwise average of the SR outputs of several models (pool selection)."""
    if not models:
        raise ConfigError("need at least one model")
    acc = None
    for m in models:
        out = run_sr(m, lr, opts)
        acc = out if acc is None else acc + out
    return acc / len(models)
