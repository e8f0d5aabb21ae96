import numpy as np
import numpy.testing as npt
import pytest

from seaclear import DeblurParams, DimensionError, Grid, deblur_forward, generate_clear, multiscale_mapping, upsample_features
from seaclear.deblur import deblur_backward, params_dict, upsample_features_backward
from seaclear.gradcheck import finite_diff_check, subsampled_grad_check
from seaclear.ops import ConvParams


def make_params(seed=0, feat_channels=2, image_channels=3, reduce_channels=2, scale=0.3):
    rng = np.random.default_rng(seed)
    return DeblurParams.create(rng, feat_channels, image_channels, reduce_channels, weight_scale=scale)


class TestInvariants:
    def test_kernel_sizes_enforced(self):
        p = make_params()
        bad_scales = list(p.scales)
        bad_scales[2] = ConvParams.same(np.zeros((4, 2, 3, 3)), np.zeros(4))  # 3 where 5 expected
        with pytest.raises(DimensionError):
            DeblurParams(p.reduce, bad_scales, p.fuse)

    def test_scale_channel_count_enforced(self):
        p = make_params()
        bad_scales = list(p.scales)
        bad_scales[0] = ConvParams(np.zeros((3, 2, 1, 1)), np.zeros(3))
        with pytest.raises(DimensionError):
            DeblurParams(p.reduce, bad_scales, p.fuse)

    def test_fuse_input_channels_enforced(self):
        p = make_params()
        with pytest.raises(DimensionError):
            DeblurParams(p.reduce, p.scales, ConvParams.same(np.zeros((3, 12, 3, 3)), np.zeros(3)))

    def test_reduce_must_be_1x1(self):
        p = make_params()
        with pytest.raises(DimensionError):
            DeblurParams(ConvParams.same(np.zeros((2, 2, 3, 3)), np.zeros(2)), p.scales, p.fuse)


class TestUpsampleFeatures:
    def test_identity_path(self):
        feat = Grid(np.random.default_rng(0).uniform(0, 1, (1, 6, 6)))
        reduce = ConvParams(np.ones((1, 1, 1, 1)), np.zeros(1))
        out = upsample_features(feat, reduce, 6, 6)
        npt.assert_array_equal(out.data, feat.data)

    def test_channel_and_resolution_contract(self):
        rng = np.random.default_rng(1)
        feat = Grid(rng.uniform(0, 1, (4, 4, 4)))
        reduce = ConvParams(rng.normal(size=(2, 4, 1, 1)), rng.normal(size=2))
        out = upsample_features(feat, reduce, 16, 16)
        assert out.shape == (2, 16, 16)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        feat = Grid(rng.uniform(-1, 1, (2, 4, 4)))
        reduce = ConvParams(rng.normal(size=(2, 2, 1, 1)), rng.normal(size=2))
        sel = rng.normal(size=(2, 8, 8))
        g_feat, g_w, g_b = upsample_features_backward(feat, reduce, 8, 8, sel)
        err = finite_diff_check(
            lambda g: float((upsample_features(g, reduce, 8, 8).data * sel).sum()), feat, g_feat, 1e-5
        )
        assert err < 1e-5


class TestMultiscaleMapping:
    def test_zero_weights_give_bias(self):
        p = make_params()
        for conv in p.scales:
            conv.weights[...] = 0.0
        p.fuse.weights[...] = 0.0
        p.fuse.bias[...] = [0.5, -1.0, 2.0]
        up = Grid(np.random.default_rng(3).uniform(0, 1, (2, 6, 6)))
        out = multiscale_mapping(up, p.scales, p.fuse)
        for c, b in enumerate([0.5, -1.0, 2.0]):
            npt.assert_array_equal(out.data[c], np.full((6, 6), b))

    def test_concat_order_is_permutation_consistent(self):
        # Swapping two scale branches and the matching fuse input slices
        # leaves the output unchanged.
        p = make_params(seed=4)
        up = Grid(np.random.default_rng(4).uniform(0, 1, (2, 6, 6)))
        base = multiscale_mapping(up, p.scales, p.fuse).data

        branches = [np.asarray(__import__("seaclear").conv2d(up, c).data) for c in p.scales]
        order = [2, 0, 1, 3]
        permuted = np.concatenate([branches[i] for i in order], axis=0)
        fuse_w = np.concatenate([p.fuse.weights[:, 4 * i : 4 * (i + 1)] for i in order], axis=1)
        refused = __import__("seaclear").conv2d(
            Grid(permuted), ConvParams.same(fuse_w, p.fuse.bias)
        ).data
        npt.assert_allclose(refused, base, atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        p = make_params(seed=5)
        up = Grid(rng.uniform(-1, 1, (2, 8, 8)))
        sel = rng.normal(size=(3, 8, 8))
        out, concat = multiscale_mapping(up, p.scales, p.fuse, return_cache=True)
        from seaclear.deblur import multiscale_mapping_backward

        g_up, scale_grads, _ = multiscale_mapping_backward(up, p.scales, p.fuse, concat, sel)
        err = finite_diff_check(
            lambda g: float((multiscale_mapping(g, p.scales, p.fuse).data * sel).sum()), up, g_up, 1e-5
        )
        assert err < 1e-4


class TestGenerateClear:
    def test_identity_and_constant(self):
        hazy = Grid(np.random.default_rng(6).uniform(0, 1, (3, 4, 4)))
        npt.assert_array_equal(generate_clear(Grid.full(3, 4, 4, 1.0), hazy).data, hazy.data)
        npt.assert_array_equal(
            generate_clear(Grid.zeros(3, 4, 4), hazy).data, np.ones((3, 4, 4))
        )

    def test_hand_value(self):
        out = generate_clear(Grid.full(1, 1, 1, 1.6), Grid.full(1, 1, 1, 0.5))
        npt.assert_allclose(out.data[0, 0, 0], 0.2, rtol=1e-12)


class TestDeblurForward:
    def test_near_identity_at_bias_one(self):
        p = make_params(seed=7, scale=0.0)  # zero weights, fuse bias 1
        rng = np.random.default_rng(7)
        hazy = Grid(rng.uniform(0, 1, (3, 8, 8)))
        feat = Grid(rng.uniform(-1, 1, (2, 4, 4)))
        out = deblur_forward(hazy, feat, p)
        npt.assert_array_equal(out.data, hazy.data)

    def test_output_shape(self):
        p = make_params(seed=8)
        rng = np.random.default_rng(8)
        hazy = Grid(rng.uniform(0, 1, (3, 16, 16)))
        feat = Grid(rng.uniform(-1, 1, (2, 4, 4)))
        assert deblur_forward(hazy, feat, p).shape == hazy.shape

    def test_end_to_end_gradient(self):
        rng = np.random.default_rng(9)
        p = make_params(seed=9)
        hazy = Grid(rng.uniform(0.05, 0.95, (3, 8, 8)))
        feat = Grid(rng.uniform(-1, 1, (2, 4, 4)))
        sel = rng.normal(size=(3, 8, 8))
        out, cache = deblur_forward(hazy, feat, p, return_cache=True)
        grads, g_feat = deblur_backward(p, cache, sel)

        err_feat = finite_diff_check(
            lambda g: float((deblur_forward(hazy, g, p).data * sel).sum()), feat, g_feat, 1e-5
        )

        def loss_fuse(w):
            rebuilt = DeblurParams(p.reduce, p.scales, ConvParams.same(w, p.fuse.bias))
            return float((deblur_forward(hazy, feat, rebuilt).data * sel).sum())

        err_fuse = subsampled_grad_check(
            loss_fuse, p.fuse.weights, grads["deblur.fuse.weights"], 1e-5, 24, rng
        )
        assert err_feat < 1e-4 and err_fuse < 1e-4

    def test_params_dict_names(self):
        p = make_params()
        names = set(params_dict(p))
        assert "deblur.reduce.weights" in names
        assert "deblur.scale3.bias" in names
        assert len(names) == 2 + 8 + 2
