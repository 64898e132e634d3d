import threading

import numpy as np
import pytest

from tensor_core import functional as F
from tensor_core.gradcheck import gradient_check, numerical_gradient, relative_error
from tensor_core.optim import Adam, AdamState, adam_step
from tensor_core.tensor import (Tensor, backward, default_dtype, get_default_dtype,
                                set_default_dtype)
from utilities.exceptions import ShapeError


def leaf(array):
    return Tensor(array, requires_grad=True)


def naive_conv2d(x, w, b, stride, padding):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, _, h, width = x.shape
    cout, _, kh, kw = w.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (width + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, h_out, w_out))
    for i in range(h_out):
        for j in range(w_out):
            window = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.tensordot(window, w, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


def weighted_sum_check(build, inputs, seed=0, rtol=1e-4):
    '''Gradient check of sum(build(*inputs) * fixed random weights).'''

    shape = build(*inputs).shape
    weights = Tensor(np.random.default_rng(seed).standard_normal(shape))
    return gradient_check(lambda: F.sum(F.mul(build(*inputs), weights)), inputs,
                          num_samples=20, rtol=rtol, seed=seed)


class TestPrecision:

    def test_default_is_float32(self):
        assert get_default_dtype() == np.float32
        assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_context_switches_and_restores(self):
        with default_dtype(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert get_default_dtype() == np.float32

    def test_rejects_other_dtypes(self):
        with pytest.raises(ValueError):
            set_default_dtype(np.int32)

    def test_threads_keep_their_own_default(self):
        seen = []

        def worker():
            with default_dtype(np.float64):
                seen.append(Tensor([1.0]).dtype)

        with default_dtype(np.float64):
            thread = threading.Thread(target=worker)
            thread.start()
            thread.join()
        assert seen == [np.float64]
        assert get_default_dtype() == np.float32

        thread = threading.Thread(target=lambda: seen.append(get_default_dtype()))
        with default_dtype(np.float64):
            thread.start()
            thread.join()
        assert seen[-1] == np.float32


class TestConv2d:

    @pytest.mark.parametrize('stride,padding', [(1, 1), (2, 1), (1, 0), (2, 0)])
    def test_matches_direct_loop(self, rng, float64, stride, padding):
        x = rng.standard_normal((2, 3, 6, 7))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, stride, padding),
                                   rtol=1e-12, atol=1e-12)

    def test_identity_kernel_returns_input(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 5, 7)))
        out = F.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_all_ones_kernel_sums_window(self):
        ones = Tensor(np.ones((1, 1, 3, 3)))
        out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), ones)
        assert out.shape == (1, 1, 1, 1) and out.item() == 9.0
        padded = F.conv2d(Tensor(np.ones((1, 1, 5, 5))), ones, padding=1)
        np.testing.assert_array_equal(padded.data[0, 0, 1:-1, 1:-1], np.full((3, 3), 9.0))
        assert padded.data[0, 0, 0, 0] == 4.0

    def test_output_size_uses_floor(self):
        assert F.conv2d_output_size(6, 6, 3, 3, stride=2, padding=1) == (3, 3)
        assert F.conv2d_output_size(7, 5, 1, 1) == (7, 5)

    def test_channel_mismatch_names_cin(self):
        with pytest.raises(ShapeError, match='Cin'):
            F.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 4, 3, 3))))

    def test_too_small_input_names_dimension(self):
        with pytest.raises(ShapeError, match='W=2'):
            F.conv2d(Tensor(np.zeros((1, 1, 5, 2))), Tensor(np.zeros((1, 1, 3, 3))))

    def test_deterministic(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 8, 8)))
        w = Tensor(rng.standard_normal((5, 3, 3, 3)))
        first = F.conv2d(x, w, padding=1).data
        second = F.conv2d(x, w, padding=1).data
        assert first.tobytes() == second.tobytes()


class TestGradients:

    def test_add_with_channel_broadcast(self, rng, float64):
        a, b = leaf(rng.standard_normal((2, 3, 3, 3))), leaf(rng.standard_normal((2, 1, 3, 3)))
        assert weighted_sum_check(F.add, [a, b]).passed

    def test_sub(self, rng, float64):
        a, b = leaf(rng.standard_normal((1, 2, 3, 3))), leaf(rng.standard_normal((1, 2, 3, 3)))
        assert weighted_sum_check(F.sub, [a, b]).passed

    def test_mul_with_channel_broadcast(self, rng, float64):
        a, b = leaf(rng.standard_normal((1, 3, 4, 4))), leaf(rng.standard_normal((1, 1, 4, 4)))
        assert weighted_sum_check(F.mul, [a, b]).passed

    def test_scale(self, rng, float64):
        x = leaf(rng.standard_normal((1, 2, 3, 3)))
        assert weighted_sum_check(lambda t: F.scale(t, -0.37), [x]).passed

    def test_relu_away_from_kink(self, rng, float64):
        values = rng.uniform(0.1, 1.0, (1, 2, 4, 4)) * rng.choice([-1.0, 1.0], (1, 2, 4, 4))
        assert weighted_sum_check(F.relu, [leaf(values)]).passed

    def test_sigmoid(self, rng, float64):
        assert weighted_sum_check(F.sigmoid, [leaf(3 * rng.standard_normal((1, 2, 3, 3)))]).passed

    def test_sum_and_mean(self, rng, float64):
        x = leaf(rng.standard_normal((2, 2, 3, 3)))
        assert weighted_sum_check(F.sum, [x]).passed
        assert weighted_sum_check(F.mean, [x]).passed

    @pytest.mark.parametrize('stride', [1, 2])
    def test_conv2d(self, rng, float64, stride):
        x = leaf(rng.standard_normal((2, 3, 6, 6)))
        w = leaf(rng.standard_normal((4, 3, 3, 3)))
        b = leaf(rng.standard_normal(4))
        result = weighted_sum_check(
            lambda xx, ww, bb: F.conv2d(xx, ww, bb, stride=stride, padding=1), [x, w, b])
        assert result.passed, result.max_rel_error

    def test_concat_channels(self, rng, float64):
        a, b = leaf(rng.standard_normal((1, 3, 4, 4))), leaf(rng.standard_normal((1, 1, 4, 4)))
        assert weighted_sum_check(lambda p, q: F.concat_channels([p, q]), [a, b]).passed

    def test_max_over_channels(self, rng, float64):
        assert weighted_sum_check(F.max_over_channels,
                                  [leaf(rng.standard_normal((2, 3, 4, 4)))]).passed

    @pytest.mark.parametrize('mode', ['nearest', 'pixel_shuffle'])
    def test_upsample(self, rng, float64, mode):
        x = leaf(rng.standard_normal((1, 8, 3, 3)))
        assert weighted_sum_check(lambda t: F.upsample2x(t, mode), [x]).passed

    def test_l1_loss(self, rng, float64):
        a = leaf(rng.standard_normal((1, 3, 4, 4)))
        b = leaf(rng.standard_normal((1, 3, 4, 4)))
        assert weighted_sum_check(F.l1_loss, [a, b]).passed


class TestBackward:

    def test_reused_tensor_accumulates(self, float64):
        x = leaf(np.array([1.5, -2.0, 3.0]))
        backward(F.sum(F.mul(x, x)))
        np.testing.assert_array_equal(x.grad, 2 * x.data)

    def test_second_backward_doubles(self, float64):
        x = leaf(np.array([1.0, 2.0]))
        loss = F.sum(F.scale(x, 3.0))
        loss.backward()
        loss.backward()
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])

    def test_non_scalar_loss_rejected(self):
        x = leaf(np.ones((2, 2)))
        with pytest.raises(ShapeError):
            backward(F.scale(x, 2.0))

    def test_constant_graph_rejected(self):
        with pytest.raises(ValueError):
            backward(F.sum(Tensor(np.ones(3))))

    def test_max_over_channels_tie_goes_to_lowest_channel(self):
        x = leaf(np.full((1, 3, 1, 1), 0.5))
        backward(F.sum(F.max_over_channels(x)))
        np.testing.assert_array_equal(x.grad.ravel(), [1.0, 0.0, 0.0])

    def test_operator_overloads(self, float64):
        a, b = leaf(np.array([2.0])), leaf(np.array([5.0]))
        backward(F.sum(a * b - a + 2.0 * b))
        assert a.grad[0] == 4.0
        assert b.grad[0] == 4.0

    def test_detach_cuts_graph(self, float64):
        x = leaf(np.array([1.0, 2.0]))
        y = F.scale(x, 2.0).detach()
        assert y.is_leaf and not y.requires_grad


class TestBroadcastRules:

    def test_only_single_channel_broadcasts(self):
        with pytest.raises(ShapeError, match='C'):
            F.add(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 2, 4, 4))))

    def test_spatial_mismatch_rejected(self):
        with pytest.raises(ShapeError, match='H'):
            F.mul(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 1, 5, 4))))

    def test_pixel_shuffle_layout(self):
        x = Tensor(np.arange(4.0).reshape(1, 4, 1, 1))
        np.testing.assert_array_equal(F.upsample2x(x, 'pixel_shuffle').data[0, 0],
                                      [[0.0, 1.0], [2.0, 3.0]])

    def test_pixel_shuffle_needs_multiple_of_four(self):
        with pytest.raises(ShapeError):
            F.upsample2x(Tensor(np.zeros((1, 6, 2, 2))), 'pixel_shuffle')


class TestAdam:

    def test_first_step_moves_by_lr(self, float64):
        param = leaf(np.array([1.0, -1.0]))
        param.grad = np.array([0.3, -2.0])
        adam_step([param], AdamState(lr=0.01))
        np.testing.assert_allclose(param.data, [0.99, -0.99], atol=1e-9)

    def test_zero_gradient_leaves_parameters(self, float64):
        param = leaf(np.array([0.5, -2.0, 3.0]))
        param.grad = np.zeros(3)
        adam_step([param], AdamState(lr=0.1))
        np.testing.assert_array_equal(param.data, [0.5, -2.0, 3.0])

    def test_constant_gradient_moves_against_its_sign(self, float64):
        param = leaf(np.array([1.0, 1.0]))
        state = AdamState(lr=0.01)
        trace = [param.data.copy()]
        for _ in range(2):
            param.grad = np.array([0.5, -0.5])
            adam_step([param], state)
            trace.append(param.data.copy())
        assert trace[0][0] > trace[1][0] > trace[2][0]
        assert trace[0][1] < trace[1][1] < trace[2][1]

    def test_two_steps_decrease_a_convex_quadratic(self, float64):
        param = leaf(np.array([2.0, -1.5]))
        optimiser = Adam([param], lr=0.05)
        losses = []
        for _ in range(3):
            loss = F.sum(F.mul(param, param))
            losses.append(loss.item())
            optimiser.zero_grad()
            backward(loss)
            optimiser.step()
        assert losses[0] > losses[1] > losses[2]

    def test_missing_gradient_raises(self):
        with pytest.raises(ValueError, match='no gradient'):
            adam_step([leaf(np.ones(2))], AdamState())

    def test_minimises_quadratic(self, float64):
        param = leaf(np.array([3.0]))
        optimiser = Adam([param], lr=0.1)
        for _ in range(300):
            optimiser.zero_grad()
            backward(F.sum(F.mul(param, param)))
            optimiser.step()
        assert abs(param.data[0]) < 0.05
        assert optimiser.state.step_count == 300


class TestGradCheckUtilities:

    def test_numerical_gradient_restores_value(self, float64):
        x = leaf(np.array([0.5, 1.5]))
        grad = numerical_gradient(lambda: F.sum(F.mul(x, x)), x, 1)
        assert grad == pytest.approx(3.0, rel=1e-8)
        np.testing.assert_array_equal(x.data, [0.5, 1.5])

    def test_relative_error_floor(self):
        assert relative_error(1e-12, -1e-12) == 0.0
        assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)
