import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocad.exceptions import ShapeError
from ocad.ops import (
    AdamState,
    ConvKernel,
    adam_update,
    conv2d_backward,
    conv2d_forward,
    maxpool2x2,
    mse_loss,
    relu,
    upsample_nearest2x,
)

from conftest import (
    central_difference,
    naive_conv2d,
    naive_maxpool,
    naive_maxpool_backward,
)


class TestConvForward:
    def test_output_shape_64x64(self, rng):
        x = rng.uniform(0, 1, (64, 64, 1))
        k = ConvKernel(rng.standard_normal((3, 3, 1, 32)), np.zeros(32))
        assert conv2d_forward(x, k).shape == (64, 64, 32)

    def test_identity_kernel(self, rng):
        x = rng.uniform(0, 1, (9, 7, 1))
        w = np.zeros((3, 3, 1, 1))
        w[1, 1, 0, 0] = 1.0
        out = conv2d_forward(x, ConvKernel(w, np.zeros(1)))
        np.testing.assert_array_equal(out, x)

    def test_matches_naive_loop_oracle(self, rng):
        x = rng.standard_normal((5, 5, 2))
        k = ConvKernel(rng.standard_normal((3, 3, 2, 3)), rng.standard_normal(3))
        out = conv2d_forward(x, k)
        ref = naive_conv2d(x, k.weights, k.bias)
        rel = np.abs(out - ref).max() / np.abs(ref).max()
        assert rel < 1e-12

    @pytest.mark.parametrize("shape", [(1, 1, 3, 2), (2, 7, 1, 1), (8, 8, 4, 4)])
    def test_matches_oracle_various_shapes(self, rng, shape):
        h, w, cin, cout = shape
        x = rng.standard_normal((h, w, cin))
        k = ConvKernel(rng.standard_normal((3, 3, cin, cout)), rng.standard_normal(cout))
        ref = naive_conv2d(x, k.weights, k.bias)
        np.testing.assert_allclose(conv2d_forward(x, k), ref, rtol=1e-12, atol=1e-12)

    def test_channel_mismatch_raises(self, rng):
        x = rng.standard_normal((4, 4, 2))
        k = ConvKernel(rng.standard_normal((3, 3, 3, 2)), np.zeros(2))
        with pytest.raises(ShapeError):
            conv2d_forward(x, k)

    def test_non_3x3_kernel_rejected(self):
        with pytest.raises(ShapeError):
            ConvKernel(np.zeros((5, 5, 1, 1)), np.zeros(1))

    def test_linear_in_input(self, rng):
        # conv(a*x + b*y) = a*conv(x) + b*conv(y) once the bias response is removed
        k = ConvKernel(rng.standard_normal((3, 3, 3, 2)), rng.standard_normal(2))
        x = rng.standard_normal((6, 5, 3))
        y = rng.standard_normal((6, 5, 3))
        a, b = 1.7, -0.3
        zero_resp = conv2d_forward(np.zeros_like(x), k)
        lhs = conv2d_forward(a * x + b * y, k) - zero_resp
        rhs = (
            (conv2d_forward(x, k) - zero_resp) * a
            + (conv2d_forward(y, k) - zero_resp) * b
        )
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestConvBackward:
    def test_zero_grad_out(self, rng):
        x = rng.standard_normal((4, 4, 2))
        k = ConvKernel(rng.standard_normal((3, 3, 2, 3)), rng.standard_normal(3))
        gx, gk = conv2d_backward(x, k, np.zeros((4, 4, 3)))
        assert not gx.any() and not gk.weights.any() and not gk.bias.any()

    def test_bias_gradient_is_grad_out_sum(self, rng):
        x = rng.standard_normal((5, 6, 2))
        k = ConvKernel(rng.standard_normal((3, 3, 2, 4)), rng.standard_normal(4))
        g = rng.standard_normal((5, 6, 4))
        _, gk = conv2d_backward(x, k, g)
        np.testing.assert_allclose(gk.bias, g.sum(axis=(0, 1)), rtol=1e-12)

    def test_matches_finite_differences(self, rng):
        x = rng.standard_normal((6, 6, 2))
        k = ConvKernel(rng.standard_normal((3, 3, 2, 2)), rng.standard_normal(2))
        g = rng.standard_normal((6, 6, 2))

        def objective():
            return float(np.sum(conv2d_forward(x, k) * g))

        gx, gk = conv2d_backward(x, k, g)
        checks = [(x, gx) for _ in range(4)] + [(k.weights, gk.weights)] * 4 + [(k.bias, gk.bias)] * 2
        for arr, analytic in checks:
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            fd = central_difference(objective, arr, idx)
            an = analytic[idx]
            assert abs(fd - an) < 1e-6 or abs(fd - an) / max(abs(fd), abs(an)) < 1e-4

    def test_shape_mismatch_raises(self, rng):
        x = rng.standard_normal((4, 4, 2))
        k = ConvKernel(rng.standard_normal((3, 3, 2, 3)), np.zeros(3))
        with pytest.raises(ShapeError):
            conv2d_backward(x, k, np.zeros((4, 4, 2)))  # wrong channel count


class TestRelu:
    def test_basic_values(self):
        out, _ = relu(np.array([[-1.0, 0.0, 2.0]])[:, :, None])
        np.testing.assert_array_equal(out.ravel(), [0.0, 0.0, 2.0])

    def test_all_positive_identity(self, rng):
        x = rng.uniform(0.1, 2, (4, 4, 2))
        out, backward = relu(x)
        np.testing.assert_array_equal(out, x)
        g = rng.standard_normal(x.shape)
        np.testing.assert_array_equal(backward(g), g)

    def test_gradient_matches_fd_away_from_kink(self, rng):
        x = rng.standard_normal((5, 5, 2))
        x[np.abs(x) < 0.05] = 0.1  # keep clear of the kink at 0
        g = rng.standard_normal(x.shape)
        _, backward = relu(x)
        analytic = backward(g)

        def objective():
            out, _ = relu(x)
            return float(np.sum(out * g))

        for _ in range(6):
            idx = tuple(rng.integers(0, s) for s in x.shape)
            fd = central_difference(objective, x, idx, eps=1e-6)
            assert abs(fd - analytic[idx]) < 1e-6


class TestMaxPool:
    def test_shape_64_to_32(self, rng):
        x = rng.standard_normal((64, 64, 32))
        out, _ = maxpool2x2(x)
        assert out.shape == (32, 32, 32)

    def test_constant_input_ties_route_to_first_cell(self):
        x = np.ones((4, 4, 1))
        out, backward = maxpool2x2(x)
        np.testing.assert_array_equal(out, np.ones((2, 2, 1)))
        gi = backward(np.ones((2, 2, 1)))
        expected = np.zeros((4, 4, 1))
        expected[0::2, 0::2] = 1.0  # first element of each window
        np.testing.assert_array_equal(gi, expected)

    def test_matches_naive_window_oracle(self, rng):
        x = rng.standard_normal((8, 8, 3))
        out, backward = maxpool2x2(x)
        ref_out, _ = naive_maxpool(x)
        np.testing.assert_array_equal(out, ref_out)
        g = rng.standard_normal(out.shape)
        np.testing.assert_array_equal(backward(g), naive_maxpool_backward(x, g))

    def test_odd_dims_rejected(self, rng):
        with pytest.raises(ShapeError):
            maxpool2x2(rng.standard_normal((5, 4, 1)))

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31))
    @settings(max_examples=25, deadline=None)
    def test_gradient_mass_conserved(self, h2, w2, c, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((2 * h2, 2 * w2, c))
        out, backward = maxpool2x2(x)
        g = r.standard_normal(out.shape)
        assert np.isclose(backward(g).sum(), g.sum(), rtol=1e-12, atol=1e-12)


class TestUpsample:
    def test_shape_8_to_16(self, rng):
        x = rng.standard_normal((8, 8, 16))
        out, _ = upsample_nearest2x(x)
        assert out.shape == (16, 16, 16)

    def test_single_pixel_replication_and_backward(self):
        x = np.full((1, 1, 1), 3.5)
        out, backward = upsample_nearest2x(x)
        np.testing.assert_array_equal(out, np.full((2, 2, 1), 3.5))
        np.testing.assert_array_equal(backward(np.ones((2, 2, 1))), [[[4.0]]])

    def test_pool_of_upsample_is_identity(self, rng):
        x = rng.standard_normal((4, 4, 2))
        up, _ = upsample_nearest2x(x)
        pooled, _ = maxpool2x2(up)
        np.testing.assert_array_equal(pooled, x)

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 3), st.integers(0, 2**31))
    @settings(max_examples=25, deadline=None)
    def test_gradient_mass_conserved(self, h, w, c, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((h, w, c))
        out, backward = upsample_nearest2x(x)
        g = r.standard_normal(out.shape)
        assert np.isclose(backward(g).sum(), g.sum(), rtol=1e-12, atol=1e-12)


class TestMseLoss:
    def test_identical_images(self, rng):
        x = rng.uniform(0, 1, (16, 16))
        loss, grad = mse_loss(x, x.copy())
        assert loss == 0.0 and not grad.any()

    def test_ones_vs_zeros(self):
        loss, _ = mse_loss(np.ones((64, 64)), np.zeros((64, 64)))
        assert loss == pytest.approx(1.0)

    def test_gradient_matches_fd(self, rng):
        rec = rng.uniform(0, 1, (8, 8))
        tgt = rng.uniform(0, 1, (8, 8))
        _, grad = mse_loss(rec, tgt)

        def objective():
            return mse_loss(rec, tgt)[0]

        for _ in range(5):
            idx = tuple(rng.integers(0, s) for s in rec.shape)
            fd = central_difference(objective, rec, idx, eps=1e-6)
            assert abs(fd - grad[idx]) < 1e-8

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_nonnegative_and_zero_iff_equal(self, rng):
        a = rng.uniform(0, 1, (6, 6))
        b = a.copy()
        b[3, 3] += 1e-9
        loss, _ = mse_loss(a, b)
        assert loss > 0


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = np.array([1.0, -2.0, 3.0])
        state = AdamState.zeros_like(p)
        new_p, new_state = adam_update(p, np.zeros(3), state, 0.01)
        np.testing.assert_array_equal(new_p, p)
        assert new_state.step_count == 1

    def test_first_step_magnitude(self):
        # m_hat = v_hat = 1 after one unit-gradient step: delta = lr / (1 + eps)
        p = np.array([0.5])
        state = AdamState.zeros_like(p)
        new_p, _ = adam_update(p, np.array([1.0]), state, 1e-3)
        expected = 1e-3 / (1.0 + state.epsilon)
        assert new_p[0] == pytest.approx(0.5 - expected, rel=1e-12)

    def test_optimizes_quadratic(self):
        p = np.array([1.0])
        state = AdamState.zeros_like(p)
        for _ in range(100):
            grad = 2.0 * p  # d/dp of p^2
            p, state = adam_update(p, grad, state, 0.1)
        assert abs(p[0]) < 0.5
        assert state.step_count == 100

    def test_length_mismatch(self):
        p = np.zeros(3)
        state = AdamState.zeros_like(p)
        with pytest.raises(ShapeError):
            adam_update(p, np.zeros(4), state, 0.1)

    def test_pure_state(self):
        p = np.array([1.0])
        state = AdamState.zeros_like(p)
        adam_update(p, np.array([1.0]), state, 0.1)
        assert state.step_count == 0 and not state.m.any()
