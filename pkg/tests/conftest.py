import numpy as np
import pytest

from projsr import model
from projsr.engine import ConvParams, mse_loss


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def reference_conv(x, params, pad=1):
    """Direct 6-nested-loop convolution, independent of the engine."""
    n, c, h, w = x.shape
    o = params.weights.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = h + 2 * pad - 2
    ow = w + 2 * pad - 2
    out = np.zeros((n, o, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for oi in range(o):
            for y in range(oh):
                for xq in range(ow):
                    s = params.biases[oi]
                    for ci in range(c):
                        for dy in range(3):
                            for dx in range(3):
                                s += xp[ni, ci, y + dy, xq + dx] * params.weights[oi, ci, dy, dx]
                    out[ni, oi, y, xq] = s
    return out


def relative_error(a, b):
    return abs(a - b) / max(1.0, abs(a), abs(b))


def fd_gradcheck(loss_fn, arrays, grads, eps=1e-5, max_entries=8):
    """Central finite differences against analytic grads; returns worst rel err.

    Valid only while no ReLU preactivation crosses zero inside +-eps, so
    callers pin seeds that keep activations off the kinks.
    """
    worst = 0.0
    for a, g in zip(arrays, grads):
        it = np.nditer(a, flags=["multi_index"])
        for _ in range(min(a.size, max_entries)):
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + eps
            lp = loss_fn()
            a[idx] = old - eps
            lm = loss_fn()
            a[idx] = old
            worst = max(worst, relative_error((lp - lm) / (2 * eps), g[idx]))
            it.iternext()
    return worst


def tiny_spec(width=4, units=1, cells=1, global_residual=True):
    return model.NetworkSpec(
        extraction=(width,),
        cells=tuple(model.CellSpec(units, width) for _ in range(cells)),
        reconstruction=(width, 1),
        global_residual=global_residual,
    )


def net_loss(net, x, target):
    return mse_loss(model.forward(net, x), target)[0]


def zero_params(net):
    for p in net.conv_list():
        p.weights[:] = 0
        p.biases[:] = 0
    return net
