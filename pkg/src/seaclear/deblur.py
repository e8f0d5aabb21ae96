"""Clean-image reconstruction branch.

Three stages: a 1x1 feature reduction plus bilinear enlargement to image
resolution, a bank of four parallel same-padded convolutions (kernel sizes
1, 3, 5, 7, four channels each) fused by a 3x3 conv into the per-pixel
recovery map, and the closed-form image generation clear = R*hazy - R + 1.
The recovery map carries no output activation: recovering scenes darker
than the background needs coefficients above 1.
"""

from dataclasses import dataclass

import numpy as np

from .dcp import recover_clear, recover_clear_backward
from .errors import DimensionError
from .grid import Grid
from .ops import ConvParams, bilinear_upsample, bilinear_upsample_backward, conv2d, conv2d_backward

SCALE_KERNELS = (1, 3, 5, 7)
SCALE_CHANNELS = 4


@dataclass
class DeblurParams:
    """Reduction conv, the four multiscale convs, and the fusion conv."""

    reduce: ConvParams  # 1x1, feature-dimension reduction
    scales: list  # kernel sizes 1, 3, 5, 7; 4 output channels each
    fuse: ConvParams  # 3x3, 16 concatenated channels -> image channels

    def __post_init__(self):
        if self.reduce.kernel_h != 1 or self.reduce.kernel_w != 1:
            raise DimensionError("reduce must be a 1x1 conv")
        kernels = tuple(c.kernel_h for c in self.scales)
        if kernels != SCALE_KERNELS or any(c.kernel_h != c.kernel_w for c in self.scales):
            raise DimensionError(
                f"multiscale kernels must be square sizes {SCALE_KERNELS}, got {kernels}"
            )
        for conv in self.scales:
            if conv.out_channels != SCALE_CHANNELS:
                raise DimensionError(
                    f"each multiscale conv must have {SCALE_CHANNELS} output channels, "
                    f"got {conv.out_channels}"
                )
            if conv.in_channels != self.reduce.out_channels:
                raise DimensionError(
                    f"multiscale conv expects {conv.in_channels} input channels but the "
                    f"reduction emits {self.reduce.out_channels}"
                )
            if conv.padding != (conv.kernel_h - 1) // 2 or conv.stride != 1:
                raise DimensionError("multiscale convs must be stride-1 and same-padded")
        total = SCALE_CHANNELS * len(SCALE_KERNELS)
        if self.fuse.in_channels != total:
            raise DimensionError(
                f"fuse conv must take the {total} concatenated channels, got {self.fuse.in_channels}"
            )
        if self.fuse.kernel_h != 3 or self.fuse.kernel_w != 3 or self.fuse.padding != 1:
            raise DimensionError("fuse must be a same-padded 3x3 conv")

    @classmethod
    def create(cls, rng, feat_channels, image_channels, reduce_channels=4, weight_scale=0.05):
        """Near-identity init: small random weights, fuse bias 1 so R starts near 1."""
        reduce = ConvParams(
            rng.normal(0.0, weight_scale, size=(reduce_channels, feat_channels, 1, 1)),
            np.zeros(reduce_channels),
        )
        scales = [
            ConvParams.same(
                rng.normal(0.0, weight_scale, size=(SCALE_CHANNELS, reduce_channels, k, k)),
                np.zeros(SCALE_CHANNELS),
            )
            for k in SCALE_KERNELS
        ]
        fuse = ConvParams.same(
            rng.normal(0.0, weight_scale, size=(image_channels, SCALE_CHANNELS * len(SCALE_KERNELS), 3, 3)),
            np.ones(image_channels),
        )
        return cls(reduce, scales, fuse)


def params_dict(params, prefix="deblur"):
    """Live references to every learnable array, keyed by stable names."""
    out = {f"{prefix}.reduce.weights": params.reduce.weights, f"{prefix}.reduce.bias": params.reduce.bias}
    for i, conv in enumerate(params.scales):
        out[f"{prefix}.scale{i}.weights"] = conv.weights
        out[f"{prefix}.scale{i}.bias"] = conv.bias
    out[f"{prefix}.fuse.weights"] = params.fuse.weights
    out[f"{prefix}.fuse.bias"] = params.fuse.bias
    return out


def upsample_features(feat, reduce, out_h, out_w):
    """1x1 reduction then bilinear enlargement to the image resolution."""
    reduced = conv2d(feat, reduce)
    return bilinear_upsample(reduced, out_h, out_w)


def upsample_features_backward(feat, reduce, out_h, out_w, grad_out):
    reduced_h, reduced_w = feat.height, feat.width
    g = bilinear_upsample_backward(reduced_h, reduced_w, out_h, out_w, grad_out)
    return conv2d_backward(feat, reduce, g)


def multiscale_mapping(upsampled, scales, fuse, return_cache=False):
    """Parallel multiscale convs, channel concat (kernel order 1,3,5,7), fusion."""
    branches = [conv2d(upsampled, conv) for conv in scales]
    concat = Grid._wrap(np.concatenate([b.data for b in branches], axis=0))
    recovery = conv2d(concat, fuse)
    if return_cache:
        return recovery, concat
    return recovery


def multiscale_mapping_backward(upsampled, scales, fuse, concat, grad_out):
    g_concat, g_fuse_w, g_fuse_b = conv2d_backward(concat, fuse, grad_out)
    g_up = np.zeros(upsampled.shape)
    scale_grads = []
    for i, conv in enumerate(scales):
        sl = g_concat[i * SCALE_CHANNELS : (i + 1) * SCALE_CHANNELS]
        g_in, g_w, g_b = conv2d_backward(upsampled, conv, sl)
        g_up += g_in
        scale_grads.append((g_w, g_b))
    return g_up, scale_grads, (g_fuse_w, g_fuse_b)


def generate_clear(recovery, hazy):
    """Output layer of the branch: clear = R*hazy - R + 1."""
    return recover_clear(recovery, hazy)


def deblur_forward(hazy, feat, params, return_cache=False):
    """Full branch: features -> recovery map -> predicted clear image."""
    upsampled = upsample_features(feat, params.reduce, hazy.height, hazy.width)
    recovery, concat = multiscale_mapping(upsampled, params.scales, params.fuse, return_cache=True)
    clear = generate_clear(recovery, hazy)
    if return_cache:
        return clear, (hazy, feat, upsampled, concat, recovery)
    return clear


def deblur_backward(params, cache, grad_clear, prefix="deblur"):
    """Gradients w.r.t. all branch parameters and the shared features.

    The feature gradient is the path that lets this branch clean up the
    shared extractor. The gradient w.r.t. the hazy input is discarded (it is
    data, not a prediction).
    """
    hazy, feat, upsampled, concat, recovery = cache
    g_recovery, _ = recover_clear_backward(recovery, hazy, grad_clear)
    g_up, scale_grads, (g_fuse_w, g_fuse_b) = multiscale_mapping_backward(
        upsampled, params.scales, params.fuse, concat, g_recovery
    )
    g_feat, g_red_w, g_red_b = upsample_features_backward(
        feat, params.reduce, hazy.height, hazy.width, g_up
    )
    grads = {f"{prefix}.reduce.weights": g_red_w, f"{prefix}.reduce.bias": g_red_b}
    for i, (g_w, g_b) in enumerate(scale_grads):
        grads[f"{prefix}.scale{i}.weights"] = g_w
        grads[f"{prefix}.scale{i}.bias"] = g_b
    grads[f"{prefix}.fuse.weights"] = g_fuse_w
    grads[f"{prefix}.fuse.bias"] = g_fuse_b
    return grads, g_feat
