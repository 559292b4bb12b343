"""Projection-skip network: declarative specs, construction, forward/backward.

The network has three parts. A feature-extraction head of conv+ReLU
layers, an inference body made of cells (each cell is a run of projection
units sharing one filter width), and a reconstruction tail of convolutions
with no activations, so negative values survive to the output. A
projection unit computes

    out = G(x) + F(x)

where F is a two-conv branch with ReLUs and G is either a 3x3 conv skip or
the identity. When a cell boundary changes the channel width, the first
unit of the wider cell carries the change in both G and the first F conv;
identity skips cannot change width. An optional global skip adds the raw
input to the final output so the body only has to regress the residual.

Parameters are initialized per layer from an RNG seeded with
(seed, layer_uid), where the uid depends only on the layer's role and
position. Two networks built from the same seed therefore share bitwise
identical F-branch weights even if one uses conv skips and the other
identity skips.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .engine import ConvParams
from .errors import ConfigError, ShapeError, SpecError

SKIP_CONV = "conv"
SKIP_IDENTITY = "identity"
AFTER_ACT = "after_act"
PRE_ACT = "pre_act"

VARIANTS = {
    "conv_after": (SKIP_CONV, AFTER_ACT),
    "conv_pre": (SKIP_CONV, PRE_ACT),
    "identity_after": (SKIP_IDENTITY, AFTER_ACT),
    "identity_pre": (SKIP_IDENTITY, PRE_ACT),
}

UNIT_DEPTH = 2  # convs in the F branch of every projection unit


@dataclass(frozen=True)
class ProjectionUnitSpec:
    channels_in: int
    channels_out: int
    skip_kind: str = SKIP_CONV
    activation_order: str = AFTER_ACT

    def __post_init__(self):
        if self.skip_kind not in (SKIP_CONV, SKIP_IDENTITY):
            raise SpecError(f"unknown skip kind {self.skip_kind!r}")
        if self.activation_order not in (AFTER_ACT, PRE_ACT):
            raise SpecError(f"unknown activation order {self.activation_order!r}")
        if self.skip_kind == SKIP_IDENTITY and self.channels_in != self.channels_out:
            raise SpecError(
                "identity skip cannot change channel width "
                f"({self.channels_in} -> {self.channels_out})"
            )


@dataclass(frozen=True)
class CellSpec:
    """A run of `units` projection units, all with `filters` channels."""

    units: int
    filters: int

    def __post_init__(self):
        if self.units < 1 or self.filters < 1:
            raise SpecError(f"cell must have positive units/filters, got {self}")


@dataclass(frozen=True)
class NetworkSpec:
    extraction: tuple[int, ...]
    cells: tuple[CellSpec, ...]
    reconstruction: tuple[int, ...]
    global_residual: bool = True
    skip_kind: str = SKIP_CONV
    activation_order: str = AFTER_ACT
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "extraction", tuple(self.extraction))
        object.__setattr__(self, "cells", tuple(self.cells))
        object.__setattr__(self, "reconstruction", tuple(self.reconstruction))
        if not self.reconstruction:
            raise SpecError("reconstruction part must have at least one conv")
        if self.global_residual and self.reconstruction[-1] != self.in_channels:
            raise SpecError(
                "global residual needs the last reconstruction width to match "
                f"the input channels ({self.in_channels})"
            )

    def unit_specs(self, *, conv_at_transitions: bool = False) -> list[ProjectionUnitSpec]:
        """Per-unit specs in network order.

        With conv_at_transitions, width-changing units get a conv skip even
        when the spec asks for identity skips (identity cannot change
        width); without it such a spec is rejected.
        """
        units = []
        prev = self.extraction[-1] if self.extraction else self.in_channels
        for cell in self.cells:
            for _ in range(cell.units):
                kind = self.skip_kind
                if conv_at_transitions and prev != cell.filters:
                    kind = SKIP_CONV
                units.append(
                    ProjectionUnitSpec(prev, cell.filters, kind, self.activation_order)
                )
                prev = cell.filters
        return units

    def main_path_depth(self) -> int:
        """Conv layers on the longest input-to-output path (skips excluded)."""
        n_units = sum(c.units for c in self.cells)
        return len(self.extraction) + UNIT_DEPTH * n_units + len(self.reconstruction)

    def receptive_radius(self) -> int:
        """Each 3x3 conv on the main path widens the receptive field by 1."""
        return self.main_path_depth()


def default_spec() -> NetworkSpec:
    """The full-size network: 40 main-path convs, pyramidal cell widths."""
    return NetworkSpec(
        extraction=(16, 16),
        cells=(
            CellSpec(3, 16),
            CellSpec(3, 16),
            CellSpec(3, 32),
            CellSpec(3, 32),
            CellSpec(3, 64),
            CellSpec(3, 64),
        ),
        reconstruction=(16, 1),
    )


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "extraction": list(spec.extraction),
        "cells": [[c.units, c.filters] for c in spec.cells],
        "reconstruction": list(spec.reconstruction),
        "global_residual": spec.global_residual,
        "skip_kind": spec.skip_kind,
        "activation_order": spec.activation_order,
        "in_channels": spec.in_channels,
    }


def spec_from_dict(d: dict) -> NetworkSpec:
    return NetworkSpec(
        extraction=tuple(d["extraction"]),
        cells=tuple(CellSpec(u, f) for u, f in d["cells"]),
        reconstruction=tuple(d["reconstruction"]),
        global_residual=bool(d["global_residual"]),
        skip_kind=d["skip_kind"],
        activation_order=d["activation_order"],
        in_channels=int(d["in_channels"]),
    )


@dataclass
class UnitParams:
    f1: ConvParams
    f2: ConvParams
    skip: ConvParams | None
    activation_order: str


@dataclass
class Network:
    spec: NetworkSpec
    extraction: list[ConvParams]
    units: list[UnitParams]
    reconstruction: list[ConvParams]

    def conv_list(self) -> list[ConvParams]:
        """All conv layers in canonical (serialization) order.

        Order: extraction, then per unit skip (when present) / f1 / f2,
        then reconstruction.
        """
        out = list(self.extraction)
        for u in self.units:
            if u.skip is not None:
                out.append(u.skip)
            out.extend([u.f1, u.f2])
        out.extend(self.reconstruction)
        return out

    def flat_arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved, in canonical order."""
        arrays = []
        for p in self.conv_list():
            arrays.extend([p.weights, p.biases])
        return arrays

    def clone(self) -> "Network":
        return Network(
            self.spec,
            [p.copy() for p in self.extraction],
            [
                UnitParams(u.f1.copy(), u.f2.copy(),
                           None if u.skip is None else u.skip.copy(),
                           u.activation_order)
                for u in self.units
            ],
            [p.copy() for p in self.reconstruction],
        )

    @property
    def dtype(self):
        return self.extraction[0].weights.dtype if self.extraction else (
            self.units[0].f1.weights.dtype if self.units
            else self.reconstruction[0].weights.dtype
        )


# Layer uid bands for seed derivation; uids must not collide across roles.
_UID_EXT = 10_000
_UID_F = 20_000
_UID_SKIP = 30_000
_UID_RECON = 40_000

# A summing unit G(x)+F(x) grows activation variance multiplicatively with
# depth unless the F branch starts small; this factor keeps the stack of
# units close to its projection path at init, which is what makes lr=0.1
# trainable under clipping. Applied to each unit's second F conv.
BRANCH_SCALE = 0.1

# The final reconstruction conv starts near zero so the freshly built
# network's prediction is the plain upscale and training begins at the
# bicubic baseline instead of spending its budget unlearning init noise.
OUTPUT_SCALE = 0.01


def _init_conv(c_in: int, c_out: int, seed: int, uid: int, dtype,
               gain: float = 2.0) -> ConvParams:
    """Fan-in scaled Gaussian weights, zero biases, deterministic per (seed, uid).

    gain=2 suits convs followed by a ReLU; linear convs (skips and the
    reconstruction tail) use gain=1 so they preserve variance.
    """
    rng = np.random.default_rng([seed, uid])
    std = np.sqrt(gain / (c_in * engine.KERNEL * engine.KERNEL))
    w = rng.standard_normal((c_out, c_in, engine.KERNEL, engine.KERNEL))
    w = (w * std).astype(dtype)
    b = np.zeros(c_out, dtype=dtype)
    return ConvParams(w, b)


def _build(spec: NetworkSpec, seed: int, dtype, *, conv_at_transitions: bool) -> Network:
    unit_specs = spec.unit_specs(conv_at_transitions=conv_at_transitions)
    ext = []
    prev = spec.in_channels
    for i, width in enumerate(spec.extraction):
        ext.append(_init_conv(prev, width, seed, _UID_EXT + i, dtype))
        prev = width
    units = []
    for j, us in enumerate(unit_specs):
        # gains must not depend on skip kind or activation order: all four
        # ablation variants share bitwise-identical F-branch weights
        f1 = _init_conv(us.channels_in, us.channels_out, seed, _UID_F + 10 * j, dtype)
        f2 = _init_conv(us.channels_out, us.channels_out, seed, _UID_F + 10 * j + 1,
                        dtype, gain=2.0 * BRANCH_SCALE**2)
        skip = None
        if us.skip_kind == SKIP_CONV:
            skip = _init_conv(us.channels_in, us.channels_out, seed,
                              _UID_SKIP + 10 * j, dtype, gain=1.0)
        units.append(UnitParams(f1, f2, skip, us.activation_order))
        prev = us.channels_out
    recon = []
    last = len(spec.reconstruction) - 1
    for i, width in enumerate(spec.reconstruction):
        gain = OUTPUT_SCALE**2 if i == last else 1.0
        recon.append(_init_conv(prev, width, seed, _UID_RECON + i, dtype, gain=gain))
        prev = width
    return Network(spec, ext, units, recon)


def build_network(spec: NetworkSpec, seed: int, dtype=np.float32) -> Network:
    """Freshly initialized network for the given spec, deterministic per seed."""
    return _build(spec, seed, dtype, conv_at_transitions=False)


def build_variant(kind: str, spec: NetworkSpec, seed: int, dtype=np.float32) -> Network:
    """One of the four skip/activation ablation variants of `spec`.

    Width-changing cell boundaries keep a conv skip in the identity
    variants. All four variants share bitwise-equal F-branch weights for
    equal seeds.
    """
    if kind not in VARIANTS:
        raise ConfigError(f"unknown variant {kind!r}; expected one of {sorted(VARIANTS)}")
    skip_kind, order = VARIANTS[kind]
    vspec = replace(spec, skip_kind=skip_kind, activation_order=order)
    return _build(vspec, seed, dtype, conv_at_transitions=True)


def count_parameters(spec: NetworkSpec, *, include_skips: bool = True) -> int:
    """Total scalar count of weights plus biases.

    include_skips=False counts the main path only, which is the comparable
    number against plain stacked architectures.
    """
    k2 = engine.KERNEL * engine.KERNEL

    def conv_count(c_in, c_out):
        return c_out * c_in * k2 + c_out

    total = 0
    prev = spec.in_channels
    for width in spec.extraction:
        total += conv_count(prev, width)
        prev = width
    for us in spec.unit_specs(conv_at_transitions=True):
        total += conv_count(us.channels_in, us.channels_out)
        total += conv_count(us.channels_out, us.channels_out)
        if include_skips and us.skip_kind == SKIP_CONV:
            total += conv_count(us.channels_in, us.channels_out)
        prev = us.channels_out
    for width in spec.reconstruction:
        total += conv_count(prev, width)
        prev = width
    return total


def _unit_forward(u: UnitParams, x: np.ndarray, tape: list | None):
    """One projection unit; appends intermediates to `tape` when given."""
    if u.activation_order == AFTER_ACT:
        a1 = engine.conv2d_forward(x, u.f1)
        r1 = engine.relu_forward(a1)
        a2 = engine.conv2d_forward(r1, u.f2)
        f = engine.relu_forward(a2)
        if tape is not None:
            tape.append((x, a1, r1, a2))
    else:
        r0 = engine.relu_forward(x)
        a1 = engine.conv2d_forward(r0, u.f1)
        r1 = engine.relu_forward(a1)
        f = engine.conv2d_forward(r1, u.f2)
        if tape is not None:
            tape.append((x, r0, a1, r1))
    g = x if u.skip is None else engine.conv2d_forward(x, u.skip)
    return engine.add(g, f)


def forward(net: Network, x: np.ndarray, _tapes=None) -> np.ndarray:
    """Run the network on a (n, in_channels, h, w) tensor."""
    if x.ndim != 4 or x.shape[1] != net.spec.in_channels:
        raise ShapeError(
            f"expected (n,{net.spec.in_channels},h,w) input, got {x.shape}"
        )
    if _tapes is not None:
        ext_tape, unit_tape, recon_tape = _tapes
    y = x
    for p in net.extraction:
        a = engine.conv2d_forward(y, p)
        if _tapes is not None:
            ext_tape.append((y, a))
        y = engine.relu_forward(a)
    for u in net.units:
        tape = unit_tape if _tapes is not None else None
        y = _unit_forward(u, y, tape)
    for p in net.reconstruction:
        if _tapes is not None:
            recon_tape.append(y)
        y = engine.conv2d_forward(y, p)
    if net.spec.global_residual:
        y = engine.add(y, x)
    return y


@dataclass
class Gradients:
    """Parameter gradients aligned with Network's canonical layer order."""

    extraction: list[ConvParams]
    units: list[tuple[ConvParams | None, ConvParams, ConvParams]]  # (skip, f1, f2)
    reconstruction: list[ConvParams]
    wrt_input: np.ndarray | None = None

    def flat_arrays(self) -> list[np.ndarray]:
        arrays = []
        for p in self.extraction:
            arrays.extend([p.weights, p.biases])
        for skip, f1, f2 in self.units:
            if skip is not None:
                arrays.extend([skip.weights, skip.biases])
            arrays.extend([f1.weights, f1.biases, f2.weights, f2.biases])
        for p in self.reconstruction:
            arrays.extend([p.weights, p.biases])
        return arrays


def backward(net: Network, x: np.ndarray, grad_out_fn) -> tuple[np.ndarray, Gradients, float]:
    """Forward with a tape, then exact reverse-mode gradients.

    grad_out_fn maps the network output to (scalar, grad_out); typically a
    loss. Returns (output, gradients, scalar).
    """
    ext_tape: list = []
    unit_tape: list = []
    recon_tape: list = []
    out = forward(net, x, (ext_tape, unit_tape, recon_tape))
    scalar, g = grad_out_fn(out)

    grad_x_direct = g if net.spec.global_residual else None

    recon_grads: list[ConvParams] = []
    for p, y_in in zip(reversed(net.reconstruction), reversed(recon_tape)):
        g, gp = engine.conv2d_backward(y_in, p, g)
        recon_grads.append(gp)
    recon_grads.reverse()

    unit_grads: list = []
    for u, tape in zip(reversed(net.units), reversed(unit_tape)):
        if u.activation_order == AFTER_ACT:
            x_in, a1, r1, a2 = tape
            gf = engine.relu_backward(a2, g)
            gr1, gf2 = engine.conv2d_backward(r1, u.f2, gf)
            ga1 = engine.relu_backward(a1, gr1)
            gx_f, gf1 = engine.conv2d_backward(x_in, u.f1, ga1)
        else:
            x_in, r0, a1, r1 = tape
            gr1, gf2 = engine.conv2d_backward(r1, u.f2, g)
            ga1 = engine.relu_backward(a1, gr1)
            gr0, gf1 = engine.conv2d_backward(r0, u.f1, ga1)
            gx_f = engine.relu_backward(x_in, gr0)
        if u.skip is None:
            gskip = None
            gx = gx_f + g
        else:
            gx_g, gskip = engine.conv2d_backward(x_in, u.skip, g)
            gx = gx_f + gx_g
        unit_grads.append((gskip, gf1, gf2))
        g = gx
    unit_grads.reverse()

    ext_grads: list[ConvParams] = []
    for p, (y_in, a) in zip(reversed(net.extraction), reversed(ext_tape)):
        g = engine.relu_backward(a, g)
        g, gp = engine.conv2d_backward(y_in, p, g)
        ext_grads.append(gp)
    ext_grads.reverse()

    grad_x = g if grad_x_direct is None else g + grad_x_direct
    grads = Gradients(ext_grads, unit_grads, recon_grads, grad_x)
    return out, grads, scalar
