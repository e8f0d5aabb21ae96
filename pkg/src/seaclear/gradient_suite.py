"""Assembled finite-difference checks over every differentiable operation.

Each check builds a randomized small instance, takes a random linear
functional of the operation output as the scalar loss, and compares the
analytic backward pass against central differences. Inputs are sampled away
from non-differentiable points (relu kinks, integer sampling coordinates,
dark-channel ties) since the checks probe generic-position gradients.
"""

from dataclasses import dataclass

import numpy as np

from .deblur import DeblurParams, deblur_backward, deblur_forward
from .gradcheck import finite_diff_check, subsampled_grad_check
from .grid import Grid
from .ops import ConvParams, activation, activation_backward, bilinear_upsample, bilinear_upsample_backward, conv2d, conv2d_backward
from .stn import LocParams, SamplingGrid, bilinear_sample, bilinear_sample_backward, stn_backward, stn_forward
from .trainer import TrainConfig, create_extractor, extractor_backward, extractor_forward, total_loss
from .transmission import TransNetParams, transmission_backward, transmission_forward

CHECK_H = 1e-5
CHECK_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_err: float

    @property
    def ok(self):
        return self.max_rel_err < CHECK_TOLERANCE


def _rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 777])))


def _rand_grid(rng, c, h, w, lo=-1.0, hi=1.0):
    return Grid(rng.uniform(lo, hi, size=(c, h, w)))


def _away_from_zero(rng, shape, margin=0.05):
    return rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _safe_coords(rng, gh, gw, in_h, in_w):
    # Pixel coordinates land in (i+0.2, i+0.8) bands, never near the integer
    # lattice where the sampler kinks; the -1 band exercises zero padding.
    ix = rng.integers(-1, in_w, size=(gh, gw)) + rng.uniform(0.2, 0.8, size=(gh, gw))
    iy = rng.integers(-1, in_h, size=(gh, gw)) + rng.uniform(0.2, 0.8, size=(gh, gw))
    x = 2.0 * ix / (in_w - 1) - 1.0
    y = 2.0 * iy / (in_h - 1) - 1.0
    return SamplingGrid(np.stack([x, y], axis=-1))


def _check_conv2d(rng, seed):
    x = _rand_grid(rng, 2, 5, 5)
    p = ConvParams(rng.normal(0, 0.5, size=(3, 2, 3, 3)), rng.normal(0, 0.5, size=3), padding=1)
    sel = rng.normal(0, 1.0, size=(3, 5, 5))
    gx, gw, gb = conv2d_backward(x, p, sel)

    def loss_of_input(g):
        return float((conv2d(g, p).data * sel).sum())

    def loss_of_weights(w):
        return float((conv2d(x, ConvParams(w, p.bias, padding=1)).data * sel).sum())

    def loss_of_bias(b):
        return float((conv2d(x, ConvParams(p.weights, b, padding=1)).data * sel).sum())

    yield CheckResult("conv2d/input", seed, finite_diff_check(loss_of_input, x, gx, CHECK_H))
    yield CheckResult("conv2d/weights", seed, finite_diff_check(loss_of_weights, p.weights, gw, CHECK_H))
    yield CheckResult("conv2d/bias", seed, finite_diff_check(loss_of_bias, p.bias, gb, CHECK_H))

    x2 = _rand_grid(rng, 2, 6, 6)
    p2 = ConvParams(rng.normal(0, 0.5, size=(2, 2, 3, 3)), rng.normal(0, 0.5, size=2), padding=0, stride=2)
    sel2 = rng.normal(0, 1.0, size=(2, 2, 2))
    gx2, _, _ = conv2d_backward(x2, p2, sel2)
    yield CheckResult(
        "conv2d_stride2/input",
        seed,
        finite_diff_check(lambda g: float((conv2d(g, p2).data * sel2).sum()), x2, gx2, CHECK_H),
    )


def _check_bilinear(rng, seed):
    x = _rand_grid(rng, 2, 3, 3)
    sel = rng.normal(0, 1.0, size=(2, 5, 7))
    gx = bilinear_upsample_backward(3, 3, 5, 7, sel)
    yield CheckResult(
        "bilinear_upsample/input",
        seed,
        finite_diff_check(lambda g: float((bilinear_upsample(g, 5, 7).data * sel).sum()), x, gx, CHECK_H),
    )


def _check_activation(rng, seed):
    for kind in ("relu", "sigmoid"):
        x = Grid(_away_from_zero(rng, (2, 4, 4)))
        sel = rng.normal(0, 1.0, size=(2, 4, 4))
        ga = activation_backward(x, kind, sel)
        yield CheckResult(
            f"activation_{kind}/input",
            seed,
            finite_diff_check(lambda g, k=kind: float((activation(g, k).data * sel).sum()), x, ga, CHECK_H),
        )


def _check_sampler(rng, seed):
    x = _rand_grid(rng, 2, 6, 6)
    grid = _safe_coords(rng, 5, 5, 6, 6)
    sel = rng.normal(0, 1.0, size=(2, 5, 5))
    gx, gcoords = bilinear_sample_backward(x, grid, sel)

    def loss_of_input(g):
        return float((bilinear_sample(g, grid).data * sel).sum())

    def loss_of_coords(c):
        return float((bilinear_sample(x, SamplingGrid(c)).data * sel).sum())

    yield CheckResult("bilinear_sample/input", seed, finite_diff_check(loss_of_input, x, gx, CHECK_H))
    yield CheckResult(
        "bilinear_sample/coords", seed, finite_diff_check(loss_of_coords, grid.coords, gcoords, CHECK_H)
    )


def _check_stn(rng, seed, probe):
    feat = Grid(_away_from_zero(rng, (2, 6, 6), margin=0.1))
    params = LocParams.create(
        rng, 2, 6, 6, hidden=(4, 4), out_dim=8, head_offset=rng.uniform(-0.15, 0.15, size=8)
    )
    params.fc_w[...] = rng.normal(0, 0.02, size=params.fc_w.shape)
    sel = rng.normal(0, 1.0, size=(2, 6, 6))
    out, cache = stn_forward(feat, params, return_cache=True)
    grads, g_feat = stn_backward(cache, sel)

    def rebuilt(conv1_w=None, fc_w=None, fc_b=None):
        return LocParams(
            ConvParams(conv1_w if conv1_w is not None else params.conv1.weights, params.conv1.bias, 1, 2),
            params.conv2,
            fc_w if fc_w is not None else params.fc_w,
            fc_b if fc_b is not None else params.fc_b,
        )

    def loss(p, f=feat):
        return float((stn_forward(f, p).data * sel).sum())

    yield CheckResult(
        "localize_stn/feat", seed, finite_diff_check(lambda g: loss(params, g), feat, g_feat, CHECK_H)
    )
    yield CheckResult(
        "localize_stn/fc_bias",
        seed,
        finite_diff_check(lambda b: loss(rebuilt(fc_b=b)), params.fc_b, grads["fc.bias"], CHECK_H),
    )
    yield CheckResult(
        "localize_stn/fc_weights",
        seed,
        subsampled_grad_check(
            lambda w: loss(rebuilt(fc_w=w)), params.fc_w, grads["fc.weights"], CHECK_H, probe, rng
        ),
    )
    yield CheckResult(
        "localize_stn/conv1_weights",
        seed,
        subsampled_grad_check(
            lambda w: loss(rebuilt(conv1_w=w)), params.conv1.weights, grads["conv1.weights"], CHECK_H, probe, rng
        ),
    )


def _check_deblur(rng, seed, probe):
    feat = _rand_grid(rng, 2, 4, 4)
    hazy = _rand_grid(rng, 3, 8, 8, lo=0.05, hi=0.95)
    params = DeblurParams.create(rng, 2, 3, reduce_channels=2, weight_scale=0.3)
    sel = rng.normal(0, 1.0, size=(3, 8, 8))
    out, cache = deblur_forward(hazy, feat, params, return_cache=True)
    grads, g_feat = deblur_backward(params, cache, sel)

    def rebuilt(reduce_w=None, scale3_w=None, fuse_w=None, fuse_b=None):
        scales = list(params.scales)
        if scale3_w is not None:
            scales[3] = ConvParams.same(scale3_w, params.scales[3].bias)
        return DeblurParams(
            ConvParams(
                reduce_w if reduce_w is not None else params.reduce.weights, params.reduce.bias
            ),
            scales,
            ConvParams.same(
                fuse_w if fuse_w is not None else params.fuse.weights,
                fuse_b if fuse_b is not None else params.fuse.bias,
            ),
        )

    def loss(p, f=feat):
        return float((deblur_forward(hazy, f, p).data * sel).sum())

    yield CheckResult(
        "deblur_forward/feat", seed, finite_diff_check(lambda g: loss(params, g), feat, g_feat, CHECK_H)
    )
    yield CheckResult(
        "deblur_forward/reduce_weights",
        seed,
        finite_diff_check(
            lambda w: loss(rebuilt(reduce_w=w)), params.reduce.weights, grads["deblur.reduce.weights"], CHECK_H
        ),
    )
    yield CheckResult(
        "deblur_forward/scale7_weights",
        seed,
        subsampled_grad_check(
            lambda w: loss(rebuilt(scale3_w=w)),
            params.scales[3].weights,
            grads["deblur.scale3.weights"],
            CHECK_H,
            probe,
            rng,
        ),
    )
    yield CheckResult(
        "deblur_forward/fuse_weights",
        seed,
        subsampled_grad_check(
            lambda w: loss(rebuilt(fuse_w=w)), params.fuse.weights, grads["deblur.fuse.weights"], CHECK_H, probe, rng
        ),
    )
    yield CheckResult(
        "deblur_forward/fuse_bias",
        seed,
        finite_diff_check(lambda b: loss(rebuilt(fuse_b=b)), params.fuse.bias, grads["deblur.fuse.bias"], CHECK_H),
    )


def _tiny_transnet(rng):
    return TransNetParams.create(rng, 3, encoder_widths=(2, 2, 2, 2), decoder_widths=(2, 2, 2, 2))


# Central differences are meaningless within h of a relu kink; instances are
# redrawn until every pre-activation clears this margin.
RELU_MARGIN = 2e-4


def _relu_margin(pre_activations):
    return min(float(np.abs(z.data).min()) for z in pre_activations)


def _trans_pre_activations(cache):
    enc_cache, dec_cache, _, _ = cache
    return [z for _, z in enc_cache] + [z for _, _, z in dec_cache]


def _check_transmission(rng, seed, probe):
    while True:
        image = _rand_grid(rng, 3, 16, 16, lo=0.02, hi=0.98)
        params = _tiny_transnet(rng)
        t, cache = transmission_forward(image, params, return_cache=True)
        if _relu_margin(_trans_pre_activations(cache)) > RELU_MARGIN:
            break
    sel = rng.normal(0, 1.0, size=(1, 16, 16))
    grads, _ = transmission_backward(params, cache, sel)

    def loss_with(name, arr):
        rebuilt = TransNetParams(
            [
                ConvParams(arr if name == f"enc{i}" else c.weights, c.bias, c.padding, c.stride)
                for i, c in enumerate(params.encoder)
            ],
            [
                ConvParams(arr if name == f"dec{i}" else c.weights, c.bias, c.padding, c.stride)
                for i, c in enumerate(params.decoder)
            ],
            ConvParams(
                arr if name == "head" else params.head.weights, params.head.bias, 0, 1
            ),
        )
        return float((transmission_forward(image, rebuilt).data * sel).sum())

    for name, point, analytic in (
        ("enc0", params.encoder[0].weights, grads["trans.enc0.weights"]),
        ("dec3", params.decoder[3].weights, grads["trans.dec3.weights"]),
        ("head", params.head.weights, grads["trans.head.weights"]),
    ):
        yield CheckResult(
            f"predict_transmission/{name}_weights",
            seed,
            subsampled_grad_check(lambda w, n=name: loss_with(n, w), point, analytic, CHECK_H, probe, rng),
        )


def _check_total_loss(rng, seed, probe):
    config = TrainConfig(patch=3, lambda_dcp=0.1)
    background = np.array([0.7, 0.8, 0.75])

    def forward():
        feat, ext_cache = extractor_forward(hazy, extractor, return_cache=True)
        clear_pred, deb_cache = deblur_forward(hazy, feat, deblur_params, return_cache=True)
        t_pred, trans_cache = transmission_forward(hazy, trans_params, return_cache=True)
        bundle = total_loss(hazy, clear_pred, t_pred, background, config)
        return bundle, ext_cache, deb_cache, trans_cache

    while True:
        hazy = _rand_grid(rng, 3, 16, 16, lo=0.05, hi=0.95)
        extractor = create_extractor(rng, 3, widths=(2, 2, 2))
        deblur_params = DeblurParams.create(rng, 2, 3, reduce_channels=2, weight_scale=0.3)
        trans_params = _tiny_transnet(rng)
        bundle, ext_cache, deb_cache, trans_cache = forward()
        pre = [z for _, z in ext_cache] + _trans_pre_activations(trans_cache)
        if _relu_margin(pre) > RELU_MARGIN:
            break
    deb_grads, g_feat = deblur_backward(deblur_params, deb_cache, bundle.grad_clear)
    trans_grads, _ = transmission_backward(trans_params, trans_cache, bundle.grad_transmission)
    ext_grads, _ = extractor_backward(extractor, ext_cache, g_feat)

    def loss_setting(arr_holder, attr, value):
        old = getattr(arr_holder, attr)
        try:
            setattr(arr_holder, attr, value)
            return float(forward()[0].total)
        finally:
            setattr(arr_holder, attr, old)

    cases = (
        ("extractor_conv0", extractor[0], ext_grads["extractor.conv0.weights"]),
        ("deblur_fuse", deblur_params.fuse, deb_grads["deblur.fuse.weights"]),
        ("trans_enc0", trans_params.encoder[0], trans_grads["trans.enc0.weights"]),
    )
    for name, holder, analytic in cases:
        yield CheckResult(
            f"total_loss/{name}_weights",
            seed,
            subsampled_grad_check(
                lambda w, h=holder: loss_setting(h, "weights", w), holder.weights, analytic, CHECK_H, probe, rng
            ),
        )


def run_gradient_suite(seeds=tuple(range(20)), probe=16):
    """Run every check for every seed; returns a list of CheckResult."""
    results = []
    for seed in seeds:
        rng = _rng(seed)
        for gen in (
            _check_conv2d(rng, seed),
            _check_bilinear(rng, seed),
            _check_activation(rng, seed),
            _check_sampler(rng, seed),
            _check_stn(rng, seed, probe),
            _check_deblur(rng, seed, probe),
            _check_transmission(rng, seed, probe),
            _check_total_loss(rng, seed, probe),
        ):
            results.extend(gen)
    return results
