"""Learned transmission-map prediction branch.

A small stride-2 conv encoder followed by four resize-convolution stages
(2x bilinear upsample, then a 3x3 conv, which avoids checkerboard
artifacts) and a 1x1 head. The head output is squashed into [T_MIN, 1], so
downstream physics never divides by a near-zero transmission whatever the
parameters are.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .grid import Grid
from .imaging import T_MIN
from .ops import (
    ConvParams,
    activation,
    activation_backward,
    bilinear_upsample,
    bilinear_upsample_backward,
    conv2d,
    conv2d_backward,
    init_conv,
)

ENCODER_WIDTHS = (8, 16, 32, 32)
DECODER_WIDTHS = (32, 16, 8, 4)


@dataclass
class TransNetParams:
    """Encoder stack, resize-conv decoder stages, and the 1x1 projection head."""

    encoder: list
    decoder: list
    head: ConvParams

    def __post_init__(self):
        if len(self.encoder) != len(self.decoder):
            raise DimensionError(
                f"encoder halves the resolution {len(self.encoder)} times but the "
                f"decoder doubles it {len(self.decoder)} times"
            )
        for conv in self.encoder:
            if conv.stride != 2:
                raise DimensionError("encoder convs must have stride 2")
        for conv in self.decoder:
            if conv.stride != 1:
                raise DimensionError("decoder convs must have stride 1")
        if self.head.out_channels != 1 or self.head.kernel_h != 1 or self.head.kernel_w != 1:
            raise DimensionError("head must be a 1x1 conv with a single output channel")

    @property
    def scale_factor(self):
        return 2 ** len(self.encoder)

    @classmethod
    def create(cls, rng, in_channels=3, encoder_widths=ENCODER_WIDTHS, decoder_widths=DECODER_WIDTHS):
        encoder = []
        prev = in_channels
        for width in encoder_widths:
            encoder.append(init_conv(rng, width, prev, 3, stride=2, padding=1))
            prev = width
        decoder = []
        for width in decoder_widths:
            decoder.append(init_conv(rng, width, prev, 3, stride=1, padding=1))
            prev = width
        head = init_conv(rng, 1, prev, 1, stride=1, padding=0)
        return cls(encoder, decoder, head)


def params_dict(params, prefix="trans"):
    """Live references to every learnable array, keyed by stable names."""
    out = {}
    for i, conv in enumerate(params.encoder):
        out[f"{prefix}.enc{i}.weights"] = conv.weights
        out[f"{prefix}.enc{i}.bias"] = conv.bias
    for i, conv in enumerate(params.decoder):
        out[f"{prefix}.dec{i}.weights"] = conv.weights
        out[f"{prefix}.dec{i}.bias"] = conv.bias
    out[f"{prefix}.head.weights"] = params.head.weights
    out[f"{prefix}.head.bias"] = params.head.bias
    return out


def transmission_forward(image, params, return_cache=False):
    factor = params.scale_factor
    if image.height % factor or image.width % factor:
        raise DimensionError(
            f"input {image.height}x{image.width} must be divisible by {factor} "
            f"({len(params.encoder)} halvings)"
        )
    enc_cache = []
    x = image
    for conv in params.encoder:
        z = conv2d(x, conv)
        a = activation(z, "relu")
        enc_cache.append((x, z))
        x = a
    dec_cache = []
    for conv in params.decoder:
        up = bilinear_upsample(x, x.height * 2, x.width * 2)
        z = conv2d(up, conv)
        a = activation(z, "relu")
        dec_cache.append((x, up, z))
        x = a
    z_head = conv2d(x, params.head)
    sig = activation(z_head, "sigmoid")
    t = Grid._wrap(T_MIN + (1.0 - T_MIN) * sig.data)
    if return_cache:
        return t, (enc_cache, dec_cache, x, z_head)
    return t


def predict_transmission(image, params):
    """Predict a 1-channel transmission map in [T_MIN, 1] at input resolution."""
    return transmission_forward(image, params)


def transmission_backward(params, cache, grad_t, prefix="trans"):
    """Gradients w.r.t. every parameter, given d(loss)/d(transmission)."""
    enc_cache, dec_cache, head_in, z_head = cache
    grads = {}
    g = np.asarray(grad_t, dtype=np.float64) * (1.0 - T_MIN)
    g = activation_backward(z_head, "sigmoid", g)
    g, gw, gb = conv2d_backward(head_in, params.head, g)
    grads[f"{prefix}.head.weights"] = gw
    grads[f"{prefix}.head.bias"] = gb
    for i in range(len(params.decoder) - 1, -1, -1):
        pre, up, z = dec_cache[i]
        g = activation_backward(z, "relu", g)
        g, gw, gb = conv2d_backward(up, params.decoder[i], g)
        grads[f"{prefix}.dec{i}.weights"] = gw
        grads[f"{prefix}.dec{i}.bias"] = gb
        g = bilinear_upsample_backward(pre.height, pre.width, up.height, up.width, g)
    for i in range(len(params.encoder) - 1, -1, -1):
        pre, z = enc_cache[i]
        g = activation_backward(z, "relu", g)
        g, gw, gb = conv2d_backward(pre, params.encoder[i], g)
        grads[f"{prefix}.enc{i}.weights"] = gw
        grads[f"{prefix}.enc{i}.bias"] = gb
    return grads, g
