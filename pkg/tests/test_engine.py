import math

import numpy as np
import pytest

from projsr.engine import (
    ConvParams,
    OptimizerState,
    add,
    conv2d_backward,
    conv2d_forward,
    mse_loss,
    relu_backward,
    relu_forward,
    sgd_step,
)
from projsr.errors import ConfigError, ShapeError

from conftest import reference_conv, relative_error


class TestConvForward:
    def test_zero_input_gives_bias(self):
        p = ConvParams(np.full((2, 1, 3, 3), 0.7), np.array([1.5, -2.0]))
        out = conv2d_forward(np.zeros((1, 1, 3, 3)), p)
        assert np.array_equal(out[0, 0], np.full((3, 3), 1.5))
        assert np.array_equal(out[0, 1], np.full((3, 3), -2.0))

    def test_center_delta_kernel_is_identity(self, rng):
        x = rng.standard_normal((1, 1, 5, 5))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = conv2d_forward(x, ConvParams(w, np.zeros(1)))
        assert np.array_equal(out, x)

    def test_matches_loop_reference(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        p = ConvParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
        out = conv2d_forward(x, p)
        assert np.allclose(out, reference_conv(x, p), rtol=0, atol=1e-12)

    def test_channel_mismatch_raises(self, rng):
        p = ConvParams(rng.standard_normal((2, 3, 3, 3)), np.zeros(2))
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((1, 2, 4, 4)), p)

    def test_linear_in_input_with_zero_bias(self, rng):
        p = ConvParams(rng.standard_normal((2, 2, 3, 3)), np.zeros(2))
        x = rng.standard_normal((1, 2, 5, 5))
        y = rng.standard_normal((1, 2, 5, 5))
        lhs = conv2d_forward(0.3 * x + 1.7 * y, p)
        rhs = 0.3 * conv2d_forward(x, p) + 1.7 * conv2d_forward(y, p)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_float32_inputs_stay_float32(self, rng):
        x = rng.standard_normal((2, 1, 4, 4)).astype(np.float32)
        p = ConvParams(
            rng.standard_normal((1, 1, 3, 3)).astype(np.float32),
            np.zeros(1, np.float32),
        )
        assert conv2d_forward(x, p).dtype == np.float32


class TestConvBackward:
    def test_zero_cotangent_gives_zero_grads(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        p = ConvParams(rng.standard_normal((2, 2, 3, 3)), rng.standard_normal(2))
        gx, gp = conv2d_backward(x, p, np.zeros((1, 2, 4, 4)))
        assert not gx.any() and not gp.weights.any() and not gp.biases.any()

    def test_scalar_case_center_weight(self):
        x = np.full((1, 1, 1, 1), 3.0)
        p = ConvParams(np.zeros((1, 1, 3, 3)), np.zeros(1))
        g = np.full((1, 1, 1, 1), 2.0)
        _, gp = conv2d_backward(x, p, g)
        assert gp.weights[0, 0, 1, 1] == 6.0  # input value * grad_out value
        assert gp.biases[0] == 2.0

    def test_finite_difference(self, rng):
        x = rng.standard_normal((2, 2, 5, 4))
        p = ConvParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
        g = rng.standard_normal((2, 3, 5, 4))
        gx, gp = conv2d_backward(x, p, g)
        eps = 1e-4

        def scalar(sx=None, sw=None, sb=None):
            pp = ConvParams(
                p.weights if sw is None else sw, p.biases if sb is None else sb
            )
            return float((conv2d_forward(x if sx is None else sx, pp) * g).sum())

        worst = 0.0
        for arr, grad, kw in ((x, gx, "sx"), (p.weights, gp.weights, "sw"),
                              (p.biases, gp.biases, "sb")):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in range(min(arr.size, 10)):
                idx = it.multi_index
                pert = arr.copy()
                pert[idx] += eps
                lp = scalar(**{kw: pert})
                pert[idx] -= 2 * eps
                lm = scalar(**{kw: pert})
                worst = max(worst, relative_error((lp - lm) / (2 * eps), grad[idx]))
                it.iternext()
        assert worst < 1e-4

    def test_shape_mismatch_raises(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        p = ConvParams(rng.standard_normal((2, 2, 3, 3)), np.zeros(2))
        with pytest.raises(ShapeError):
            conv2d_backward(x, p, np.zeros((1, 2, 5, 5)))


class TestRelu:
    def test_basic(self):
        x = np.array([[[[-1.0, 0.0, 2.0]]]])
        assert np.array_equal(relu_forward(x), [[[[0.0, 0.0, 2.0]]]])

    def test_all_positive_is_identity(self, rng):
        x = np.abs(rng.standard_normal((1, 2, 3, 3))) + 0.1
        assert np.array_equal(relu_forward(x), x)

    def test_gradient_at_zero_is_zero(self):
        x = np.array([[[[0.0]]]])
        g = np.array([[[[5.0]]]])
        assert relu_backward(x, g)[0, 0, 0, 0] == 0.0

    def test_finite_difference_away_from_zero(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        x[np.abs(x) < 0.05] = 0.1  # keep clear of the kink
        g = rng.standard_normal(x.shape)
        ga = relu_backward(x, g)
        eps = 1e-6
        num = ((relu_forward(x + eps) - relu_forward(x - eps)) / (2 * eps)) * g
        assert np.allclose(ga, num, atol=1e-8)


class TestAddAndMse:
    def test_add_zeros(self, rng):
        a = rng.standard_normal((1, 1, 3, 3))
        assert np.array_equal(add(a, np.zeros_like(a)), a)

    def test_add_negation(self, rng):
        a = rng.standard_normal((1, 1, 3, 3))
        assert not add(a, -a).any()

    def test_add_random_elementwise(self, rng):
        a = rng.standard_normal((2, 3, 4, 5))
        b = rng.standard_normal((2, 3, 4, 5))
        out = add(a, b)
        for idx in np.ndindex(*a.shape):
            assert out[idx] == a[idx] + b[idx]

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 2)))

    def test_mse_identical_is_zero(self, rng):
        a = rng.standard_normal((1, 2, 3, 3))
        loss, grad = mse_loss(a, a.copy())
        assert loss == 0.0 and not grad.any()

    def test_mse_constant_one_diff(self):
        p = np.full((1, 1, 4, 4), 2.0)
        t = np.full((1, 1, 4, 4), 1.0)
        loss, grad = mse_loss(p, t)
        assert loss == 1.0
        assert np.allclose(grad, 2.0 / 16)

    def test_mse_matches_scalar_loop(self, rng):
        p = rng.standard_normal((2, 1, 3, 4))
        t = rng.standard_normal((2, 1, 3, 4))
        loss, grad = mse_loss(p, t)
        acc = 0.0
        for idx in np.ndindex(*p.shape):
            acc += (p[idx] - t[idx]) ** 2
        assert relative_error(loss, acc / p.size) < 1e-12
        eps = 1e-6
        idx = (1, 0, 2, 3)
        pp = p.copy()
        pp[idx] += eps
        lp = mse_loss(pp, t)[0]
        pp[idx] -= 2 * eps
        lm = mse_loss(pp, t)[0]
        assert relative_error((lp - lm) / (2 * eps), grad[idx]) < 1e-6


class TestSgd:
    def _state(self, lr=0.1, momentum=0.9, wd=1e-4, theta=0.01, shapes=((3,),)):
        st = OptimizerState(lr, momentum, wd, theta)
        st.init_buffers([np.zeros(s) for s in shapes])
        return st

    def test_zero_grad_no_momentum_no_decay_is_noop(self):
        w = np.array([1.0, -2.0, 3.0])
        st = self._state(momentum=0.0, wd=0.0)
        sgd_step([w], [np.zeros(3)], st)
        assert np.array_equal(w, [1.0, -2.0, 3.0])

    def test_single_scalar_closed_form(self):
        w = np.array([2.0])
        st = self._state(lr=0.5, momentum=0.9, wd=0.0, theta=1.0, shapes=((1,),))
        sgd_step([w], [np.array([0.3])], st)  # within the clip bound 2.0
        assert np.allclose(w, 2.0 - 0.5 * 0.3)

    def test_clip_bound_arithmetic(self):
        lr, theta = 0.25, 0.01
        bound = theta / lr
        w = np.array([0.0])
        st = self._state(lr=lr, momentum=0.0, wd=0.0, theta=theta, shapes=((1,),))
        sgd_step([w], [np.array([10 * bound])], st)
        assert np.allclose(w, -lr * bound)  # gradient was clamped to theta/lr

    def test_plain_gd_reduction_exact(self, rng):
        w = rng.standard_normal(5)
        g = rng.standard_normal(5)
        expected = w - 0.1 * g
        st = self._state(lr=0.1, momentum=0.0, wd=0.0, theta=math.inf, shapes=((5,),))
        sgd_step([w], [g], st)
        assert np.array_equal(w, expected)

    def test_momentum_accumulates(self):
        w = np.array([0.0])
        st = self._state(lr=1.0, momentum=0.5, wd=0.0, theta=math.inf, shapes=((1,),))
        sgd_step([w], [np.array([1.0])], st)  # v=-1, w=-1
        sgd_step([w], [np.array([0.0])], st)  # v=-0.5, w=-1.5
        assert np.allclose(w, [-1.5])

    def test_nonpositive_lr_rejected(self):
        st = self._state(lr=0.1)
        st.learning_rate = 0.0
        with pytest.raises(ConfigError):
            sgd_step([np.zeros(3)], [np.zeros(3)], st)

    def test_shape_mismatch_rejected(self):
        st = self._state()
        with pytest.raises(ShapeError):
            sgd_step([np.zeros(3)], [np.zeros(4)], st)


class TestNumericHygiene:
    def test_no_nan_on_finite_inputs(self, rng):
        x = (rng.standard_normal((2, 3, 6, 6)) * 1e3).astype(np.float64)
        p = ConvParams(rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4))
        out = conv2d_forward(x, p)
        gx, gp = conv2d_backward(x, p, out)
        for arr in (out, gx, gp.weights, gp.biases):
            assert np.isfinite(arr).all()

    def test_conv_is_shape_preserving_at_pad_1(self, rng):
        x = rng.standard_normal((2, 3, 9, 7))
        p = ConvParams(rng.standard_normal((5, 3, 3, 3)), np.zeros(5))
        assert conv2d_forward(x, p).shape == (2, 5, 9, 7)
