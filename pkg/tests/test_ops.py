import numpy as np
import numpy.testing as npt
import pytest

from seaclear import ConvParams, DimensionError, Grid, ParameterError, activation, bilinear_upsample, conv2d, dropout
from seaclear.gradcheck import finite_diff_check
from seaclear.ops import (
    activation_backward,
    bilinear_upsample_backward,
    conv2d_backward,
    conv_output_shape,
    dropout_backward,
    dropout_mask,
)


def rand_grid(seed, c, h, w, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return Grid(rng.uniform(lo, hi, size=(c, h, w)))


class TestConv2d:
    def test_identity_kernel(self):
        x = rand_grid(0, 3, 6, 6)
        w = np.zeros((3, 3, 1, 1))
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        out = conv2d(x, ConvParams(w, np.zeros(3)))
        npt.assert_array_equal(out.data, x.data)

    def test_hand_sum(self):
        x = Grid([[[1.0, 2.0], [3.0, 4.0]]])
        p = ConvParams(np.ones((1, 1, 2, 2)), np.zeros(1))
        out = conv2d(x, p)
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 10.0

    def test_output_shape_with_stride_and_padding(self):
        p = ConvParams(np.zeros((4, 2, 3, 3)), np.zeros(4), padding=1, stride=2)
        assert conv_output_shape(8, 8, p) == (4, 4)
        out = conv2d(rand_grid(1, 2, 8, 8), p)
        assert out.shape == (4, 4, 4)

    def test_channel_mismatch_names_axes(self):
        p = ConvParams(np.zeros((1, 2, 3, 3)), np.zeros(1))
        with pytest.raises(DimensionError, match="3 channels.*expects 2"):
            conv2d(rand_grid(2, 3, 5, 5), p)

    def test_kernel_too_large(self):
        p = ConvParams(np.zeros((1, 1, 7, 7)), np.zeros(1))
        with pytest.raises(DimensionError):
            conv2d(rand_grid(3, 1, 5, 5), p)

    def test_linearity_in_input(self):
        rng = np.random.default_rng(7)
        p = ConvParams(rng.normal(size=(3, 2, 3, 3)), np.zeros(3), padding=1)
        x = rng.normal(size=(2, 5, 5))
        y = rng.normal(size=(2, 5, 5))
        a, b = 0.37, -1.2
        lhs = conv2d(Grid(a * x + b * y), p).data
        rhs = a * conv2d(Grid(x), p).data + b * conv2d(Grid(y), p).data
        npt.assert_allclose(lhs, rhs, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        x = Grid(rng.uniform(-1, 1, size=(2, 5, 5)))
        p = ConvParams(rng.normal(0, 0.5, size=(3, 2, 3, 3)), rng.normal(size=3), padding=1)
        sel = rng.normal(size=(3, 5, 5))
        gx, gw, gb = conv2d_backward(x, p, sel)
        err_x = finite_diff_check(lambda g: float((conv2d(g, p).data * sel).sum()), x, gx, 1e-5)
        err_w = finite_diff_check(
            lambda w: float((conv2d(x, ConvParams(w, p.bias, padding=1)).data * sel).sum()),
            p.weights,
            gw,
            1e-5,
        )
        err_b = finite_diff_check(
            lambda b: float((conv2d(x, ConvParams(p.weights, b, padding=1)).data * sel).sum()),
            p.bias,
            gb,
            1e-5,
        )
        assert err_x < 1e-6 and err_w < 1e-6 and err_b < 1e-6

    def test_backward_rejects_wrong_grad_shape(self):
        x = rand_grid(0, 2, 5, 5)
        p = ConvParams(np.zeros((3, 2, 3, 3)), np.zeros(3), padding=1)
        with pytest.raises(DimensionError):
            conv2d_backward(x, p, np.zeros((3, 4, 4)))

    def test_same_requires_odd_square(self):
        with pytest.raises(ParameterError):
            ConvParams.same(np.zeros((1, 1, 2, 2)), np.zeros(1))
        p = ConvParams.same(np.zeros((1, 1, 5, 5)), np.zeros(1))
        assert p.padding == 2


class TestBilinearUpsample:
    def test_identity_resize_is_bit_exact(self):
        x = rand_grid(2, 3, 5, 7)
        out = bilinear_upsample(x, 5, 7)
        npt.assert_array_equal(out.data, x.data)

    def test_hand_weights_width_3(self):
        x = Grid([[[0.0, 1.0]]])
        out = bilinear_upsample(x, 1, 3)
        npt.assert_array_equal(out.data, [[[0.0, 0.5, 1.0]]])

    def test_constant_preserved_exactly(self):
        for c in (0.1, 0.3, 1 / 7):
            out = bilinear_upsample(Grid.full(2, 3, 3, c), 7, 11)
            npt.assert_array_equal(out.data, np.full((2, 7, 11), c))

    def test_downsample_and_singleton_axes(self):
        x = rand_grid(5, 1, 4, 4)
        assert bilinear_upsample(x, 2, 1).shape == (1, 2, 1)
        assert bilinear_upsample(x, 1, 9).shape == (1, 1, 9)

    def test_rejects_empty_output(self):
        with pytest.raises(ParameterError):
            bilinear_upsample(rand_grid(0, 1, 2, 2), 0, 3)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        x = Grid(rng.uniform(-1, 1, size=(2, 3, 3)))
        sel = rng.normal(size=(2, 5, 7))
        gx = bilinear_upsample_backward(3, 3, 5, 7, sel)
        err = finite_diff_check(
            lambda g: float((bilinear_upsample(g, 5, 7).data * sel).sum()), x, gx, 1e-5
        )
        assert err < 1e-6


class TestActivation:
    def test_relu_all_negative(self):
        out = activation(Grid.full(2, 3, 3, -0.5), "relu")
        npt.assert_array_equal(out.data, np.zeros((2, 3, 3)))

    def test_sigmoid_at_zero(self):
        out = activation(Grid.zeros(1, 1, 1), "sigmoid")
        assert out.data[0, 0, 0] == 0.5

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = activation(Grid([[[-800.0, 800.0]]]), "sigmoid")
        npt.assert_allclose(out.data, [[[0.0, 1.0]]], atol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            activation(Grid.zeros(1, 1, 1), "tanh")

    def test_sigmoid_gradient(self):
        rng = np.random.default_rng(17)
        x = Grid(rng.uniform(-2, 2, size=(2, 4, 4)))
        sel = rng.normal(size=(2, 4, 4))
        ga = activation_backward(x, "sigmoid", sel)
        err = finite_diff_check(
            lambda g: float((activation(g, "sigmoid").data * sel).sum()), x, ga, 1e-5
        )
        assert err < 1e-6


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = rand_grid(19, 2, 4, 4)
        out = dropout(x, 0.0, seed=1, training=True)
        npt.assert_array_equal(out.data, x.data)

    def test_inference_is_identity(self):
        x = rand_grid(23, 2, 4, 4)
        out = dropout(x, 0.9, seed=1, training=False)
        npt.assert_array_equal(out.data, x.data)

    def test_survivor_fraction(self):
        x = Grid.full(1, 250, 400, 1.0)  # 1e5 elements
        out = dropout(x, 0.3, seed=99, training=True)
        survivors = np.count_nonzero(out.data) / out.size
        assert abs(survivors - 0.7) < 0.01

    def test_survivors_scaled(self):
        x = Grid.full(1, 10, 10, 1.0)
        out = dropout(x, 0.25, seed=5, training=True)
        kept = out.data[out.data != 0]
        npt.assert_allclose(kept, 1.0 / 0.75)

    def test_mask_reproducible(self):
        x = rand_grid(29, 3, 8, 8)
        a = dropout(x, 0.4, seed=123, training=True)
        b = dropout(x, 0.4, seed=123, training=True)
        npt.assert_array_equal(a.data, b.data)
        c = dropout(x, 0.4, seed=124, training=True)
        assert not np.array_equal(a.data, c.data)

    def test_rate_one_rejected(self):
        with pytest.raises(ParameterError):
            dropout(rand_grid(0, 1, 2, 2), 1.0, seed=0, training=True)

    def test_backward_uses_same_mask(self):
        shape = (2, 6, 6)
        g = np.ones(shape)
        back = dropout_backward(shape, 0.5, 7, True, g)
        npt.assert_array_equal(back, dropout_mask(shape, 0.5, 7))
