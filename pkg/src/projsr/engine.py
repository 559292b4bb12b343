"""Dense-tensor compute core.

Everything operates on plain numpy arrays in (batch, channel, height,
width) layout. The 3x3 convolutions run through numba-compiled direct
kernels: each output element is owned by exactly one thread and its
reduction order is fixed, so results are bitwise reproducible at any
thread count, and fastmath stays off. Gradients are the exact analytic
adjoints of the forward maps; the test suite holds them against central
finite differences in double precision.

Operations are pure with respect to their inputs. `sgd_step` mutates the
parameter and momentum arrays in place and is the only stateful entry
point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import config as _numba_config
from numba import njit, prange

from .errors import ConfigError, ShapeError

_numba_config.THREADING_LAYER = "omp"

KERNEL = 3  # every conv layer has a 3x3 receptive field


@dataclass
class ConvParams:
    """Weights (out_ch, in_ch, 3, 3) and biases (out_ch,) of one conv layer."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        w, b = self.weights, self.biases
        if w.ndim != 4 or w.shape[2:] != (KERNEL, KERNEL):
            raise ShapeError(f"conv weights must be (out,in,3,3), got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"biases must be ({w.shape[0]},), got {b.shape}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ConvParams":
        return ConvParams(self.weights.copy(), self.biases.copy())

    def zeros_like(self) -> "ConvParams":
        return ConvParams(np.zeros_like(self.weights), np.zeros_like(self.biases))


@njit(parallel=True, cache=True, fastmath=False)
def _conv3x3(xp, w, b, out):  # pragma: no cover - exercised via conv2d_forward
    n, oc, oh, ow = out.shape
    c = xp.shape[1]
    for no in prange(n * oc):
        ni = no // oc
        oi = no % oc
        for y in range(oh):
            for x in range(ow):
                out[ni, oi, y, x] = b[oi]
            for ci in range(c):
                for dy in range(KERNEL):
                    for dx in range(KERNEL):
                        wt = w[oi, ci, dy, dx]
                        for x in range(ow):
                            out[ni, oi, y, x] += wt * xp[ni, ci, y + dy, x + dx]


@njit(parallel=True, cache=True, fastmath=False)
def _conv3x3_gradw(xp, gout, gw):  # pragma: no cover - via conv2d_backward
    # Per-tap products are accumulated into a plane (independent per pixel,
    # so the loop vectorizes) and reduced in a fixed row-major order.
    n, oc, oh, ow = gout.shape
    c = xp.shape[1]
    for oc_i in prange(oc * c):
        oi = oc_i // c
        ci = oc_i % c
        acc = np.empty((oh, ow), xp.dtype)
        for dy in range(KERNEL):
            for dx in range(KERNEL):
                for y in range(oh):
                    for x in range(ow):
                        acc[y, x] = gout[0, oi, y, x] * xp[0, ci, y + dy, x + dx]
                for ni in range(1, n):
                    for y in range(oh):
                        for x in range(ow):
                            acc[y, x] += gout[ni, oi, y, x] * xp[ni, ci, y + dy, x + dx]
                s = xp.dtype.type(0.0)
                for y in range(oh):
                    for x in range(ow):
                        s += acc[y, x]
                gw[oi, ci, dy, dx] = s


def _check_input(x: np.ndarray) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected a (n,c,h,w) tensor, got shape {x.shape}")


def _matched(params: ConvParams, dtype) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.ascontiguousarray(params.weights, dtype=dtype),
        np.ascontiguousarray(params.biases, dtype=dtype),
    )


def conv2d_forward(x: np.ndarray, params: ConvParams, pad: int = 1) -> np.ndarray:
    """3x3 convolution with zero padding; spatial dims are preserved at pad=1.

    out[n,o,y,x] = bias[o] + sum_{i,dy,dx} x[n,i,y+dy,x+dx] * w[o,i,dy,dx]
    """
    _check_input(x)
    n, c, h, w = x.shape
    if c != params.in_channels:
        raise ShapeError(
            f"input has {c} channels, kernel expects {params.in_channels}"
        )
    if pad < 0 or h + 2 * pad < KERNEL or w + 2 * pad < KERNEL:
        raise ShapeError(f"input {x.shape} too small for a 3x3 kernel at pad={pad}")
    wts, bias = _matched(params, x.dtype)
    xp = np.pad(np.ascontiguousarray(x), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty(
        (n, params.out_channels, h + 2 * pad - KERNEL + 1, w + 2 * pad - KERNEL + 1),
        dtype=x.dtype,
    )
    _conv3x3(xp, wts, bias, out)
    return out


def conv2d_backward(
    x: np.ndarray, params: ConvParams, grad_out: np.ndarray, pad: int = 1
) -> tuple[np.ndarray, ConvParams]:
    """Exact gradients of conv2d_forward wrt its input and parameters."""
    _check_input(x)
    _check_input(grad_out)
    n, c, h, w = x.shape
    oh = h + 2 * pad - KERNEL + 1
    ow = w + 2 * pad - KERNEL + 1
    if grad_out.shape != (n, params.out_channels, oh, ow):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match the forward "
            f"output ({n},{params.out_channels},{oh},{ow})"
        )
    wts, _ = _matched(params, x.dtype)
    g = np.ascontiguousarray(grad_out)
    xp = np.pad(np.ascontiguousarray(x), ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    grad_b = g.sum(axis=(0, 2, 3))
    grad_w = np.empty_like(wts)
    _conv3x3_gradw(xp, g, grad_w)

    # grad wrt the padded input is the full correlation of grad_out with the
    # flipped, channel-transposed kernel; the same forward kernel computes it.
    w_t = np.ascontiguousarray(wts[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gp = np.pad(g, ((0, 0), (0, 0), (KERNEL - 1,) * 2, (KERNEL - 1,) * 2))
    grad_xp = np.empty((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    _conv3x3(gp, w_t, np.zeros(c, dtype=x.dtype), grad_xp)
    if pad:
        grad_x = np.ascontiguousarray(grad_xp[:, :, pad:-pad, pad:-pad])
    else:
        grad_x = grad_xp
    return grad_x, ConvParams(grad_w, grad_b)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Passes the gradient where x > 0; the subgradient at 0 is taken as 0."""
    if x.shape != grad_out.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {grad_out.shape}")
    return np.where(x > 0, grad_out, 0)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum; the backward pass routes grad_out to both operands."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient wrt prediction.

    The scalar loss is accumulated in float64 regardless of input dtype.
    """
    if prediction.shape != target.shape:
        raise ShapeError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    diff = prediction - target
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    grad = diff * (2.0 / diff.size)
    return loss, grad.astype(prediction.dtype, copy=False)


@dataclass
class OptimizerState:
    """Heavy-ball SGD state: one momentum buffer per parameter array.

    Gradients are clamped elementwise to [-clip_theta/lr, +clip_theta/lr]
    before the update, so the clipping bound tightens as the learning rate
    grows (and loosens as it decays). clip_theta=inf disables clipping.
    """

    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_theta: float = 0.001
    velocities: list[np.ndarray] = field(default_factory=list)

    def init_buffers(self, params: list[np.ndarray]) -> None:
        self.velocities = [np.zeros_like(p) for p in params]


def sgd_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState
) -> None:
    """One momentum-SGD update, in place.

    For each parameter w with gradient g:
        g'  = clip(g, -theta/lr, +theta/lr)
        v  <- momentum * v - lr * (g' + weight_decay * w)
        w  <- w + v
    """
    lr = state.learning_rate
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.velocities):
        raise ShapeError("params, grads and momentum buffers must align")
    bound = state.clip_theta / lr
    for w, g, v in zip(params, grads, state.velocities):
        if w.shape != g.shape or w.shape != v.shape:
            raise ShapeError(f"parameter/gradient shape mismatch at {w.shape}")
        if np.isfinite(bound):
            g = np.clip(g, -bound, bound)
        if state.weight_decay != 0.0:
            g = g + state.weight_decay * w
        v *= state.momentum
        v -= lr * g
        w += v
