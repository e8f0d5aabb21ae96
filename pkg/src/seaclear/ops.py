"""Differentiable primitives: convolution, bilinear resizing, activations, dropout.

Every forward operation has a matching ``*_backward`` returning analytic
gradients; the pairing is what the finite-difference harness in ``gradcheck``
verifies. Convolution is cross-correlation (no kernel flip). Bilinear
resizing uses align-corners semantics: normalized corners land exactly on
corner pixel centers.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError
from .grid import Grid


@dataclass
class ConvParams:
    """Weights of one cross-correlation layer.

    ``padding`` is symmetric zero padding, the same amount on every side;
    for odd square kernels ``ConvParams.same`` picks the padding that keeps
    the output the same size as the input at stride 1.
    """

    weights: np.ndarray  # (out_channels, in_channels, kernel_h, kernel_w)
    bias: np.ndarray  # (out_channels,)
    padding: int = 0
    stride: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise DimensionError(
                f"conv weights must have rank 4 (out, in, kh, kw), got rank {self.weights.ndim}"
            )
        if min(self.weights.shape) < 1:
            raise DimensionError(f"conv weight dimensions must be positive, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"bias has shape {self.bias.shape}, expected ({self.weights.shape[0]},)"
            )
        if self.padding < 0:
            raise ParameterError(f"padding must be >= 0, got {self.padding}")
        if self.stride < 1:
            raise ParameterError(f"stride must be >= 1, got {self.stride}")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel_h(self):
        return self.weights.shape[2]

    @property
    def kernel_w(self):
        return self.weights.shape[3]

    @classmethod
    def same(cls, weights, bias, stride=1):
        """Construct with same-size padding; requires an odd square kernel."""
        weights = np.asarray(weights, dtype=np.float64)
        kh, kw = weights.shape[2], weights.shape[3]
        if kh != kw or kh % 2 == 0:
            raise ParameterError(
                f"same padding requires an odd square kernel, got {kh}x{kw}"
            )
        return cls(weights, bias, padding=(kh - 1) // 2, stride=stride)


def init_conv(rng, out_channels, in_channels, kernel, stride=1, padding=None, weight_scale=None):
    """He-initialized ConvParams; padding defaults to (kernel-1)//2."""
    if padding is None:
        padding = (kernel - 1) // 2
    fan_in = in_channels * kernel * kernel
    scale = weight_scale if weight_scale is not None else np.sqrt(2.0 / fan_in)
    w = rng.normal(0.0, scale, size=(out_channels, in_channels, kernel, kernel))
    b = np.zeros(out_channels)
    return ConvParams(w, b, padding=padding, stride=stride)


def conv_output_shape(in_h, in_w, params):
    """Output height/width for a conv; raises if either would be empty."""
    oh = (in_h + 2 * params.padding - params.kernel_h) // params.stride + 1
    ow = (in_w + 2 * params.padding - params.kernel_w) // params.stride + 1
    if in_h + 2 * params.padding < params.kernel_h or in_w + 2 * params.padding < params.kernel_w:
        raise DimensionError(
            f"kernel {params.kernel_h}x{params.kernel_w} does not fit input "
            f"{in_h}x{in_w} with padding {params.padding}"
        )
    return oh, ow


def _padded_windows(data, params):
    p, s = params.padding, params.stride
    padded = np.pad(data, ((0, 0), (p, p), (p, p))) if p else data
    win = sliding_window_view(padded, (params.kernel_h, params.kernel_w), axis=(1, 2))
    return padded.shape, win[:, ::s, ::s]


def conv2d(x, params):
    """Cross-correlate ``x`` with ``params.weights`` and add bias."""
    if x.channels != params.in_channels:
        raise DimensionError(
            f"conv2d: input has {x.channels} channels, kernel expects {params.in_channels}"
        )
    conv_output_shape(x.height, x.width, params)
    _, win = _padded_windows(x.data, params)
    out = np.tensordot(params.weights, win, axes=([1, 2, 3], [0, 3, 4]))
    out += params.bias[:, None, None]
    return Grid._wrap(out)


def conv2d_backward(x, params, grad_out):
    """Gradients of a conv2d output w.r.t. input, weights and bias.

    ``grad_out`` must be shaped like the forward output. Returns
    ``(grad_input, grad_weights, grad_bias)`` as plain arrays.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    oh, ow = conv_output_shape(x.height, x.width, params)
    expected = (params.out_channels, oh, ow)
    if grad_out.shape != expected:
        raise DimensionError(
            f"conv2d_backward: upstream gradient has shape {grad_out.shape}, expected {expected}"
        )
    p, s = params.padding, params.stride
    padded_shape, win = _padded_windows(x.data, params)

    grad_b = grad_out.sum(axis=(1, 2))
    grad_w = np.tensordot(grad_out, win, axes=([1, 2], [1, 2]))

    # Scatter W^T . grad_out back over the padded input, one kernel offset at a time.
    spread = np.tensordot(params.weights, grad_out, axes=([0], [0]))  # (in, kh, kw, oh, ow)
    grad_padded = np.zeros(padded_shape)
    for i in range(params.kernel_h):
        for j in range(params.kernel_w):
            grad_padded[:, i : i + s * oh : s, j : j + s * ow : s] += spread[:, i, j]
    grad_x = grad_padded[:, p : p + x.height, p : p + x.width] if p else grad_padded
    return grad_x, grad_w, grad_b


def _axis_samples(n_out, n_in):
    # Align-corners source positions: lo/hi indices and the fraction between.
    if n_out == 1:
        src = np.zeros(1)
    else:
        src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = src.astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def _axis_lerp(data, axis, n_out):
    n_in = data.shape[axis]
    if n_out == n_in:
        return data
    lo, hi, frac = _axis_samples(n_out, n_in)
    a = np.take(data, lo, axis=axis)
    b = np.take(data, hi, axis=axis)
    shape = [1] * data.ndim
    shape[axis] = n_out
    # a + f*(b - a) rather than (1-f)*a + f*b: constants survive bit-exactly.
    return a + frac.reshape(shape) * (b - a)


@lru_cache(maxsize=128)
def _interp_matrix(n_out, n_in):
    w = np.zeros((n_out, n_in))
    lo, hi, frac = _axis_samples(n_out, n_in)
    np.add.at(w, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(w, (np.arange(n_out), hi), frac)
    w.setflags(write=False)
    return w


def bilinear_upsample(x, out_h, out_w):
    """Resize a grid with align-corners bilinear interpolation."""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"output size must be >= 1, got {out_h}x{out_w}")
    out = _axis_lerp(_axis_lerp(x.data, 1, out_h), 2, out_w)
    return Grid._wrap(out)


def bilinear_upsample_backward(in_h, in_w, out_h, out_w, grad_out):
    """Distribute an output-shaped gradient back through bilinear resizing."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    wy = _interp_matrix(out_h, in_h)
    wx = _interp_matrix(out_w, in_w)
    return np.matmul(np.matmul(wy.T, grad_out), wx)


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def activation(x, kind):
    """Elementwise nonlinearity, ``kind`` is "relu" or "sigmoid"."""
    if kind == "relu":
        return Grid._wrap(np.maximum(x.data, 0.0))
    if kind == "sigmoid":
        return Grid._wrap(_sigmoid(x.data))
    raise ParameterError(f"unknown activation kind {kind!r}")


def activation_backward(x, kind, grad_out):
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != x.shape:
        raise DimensionError(
            f"activation_backward: gradient shape {grad_out.shape} != input shape {x.shape}"
        )
    if kind == "relu":
        return grad_out * (x.data > 0)
    if kind == "sigmoid":
        s = _sigmoid(x.data)
        return grad_out * s * (1.0 - s)
    raise ParameterError(f"unknown activation kind {kind!r}")


def dropout_mask(shape, rate, seed):
    """The scale mask dropout applies: 0 for dropped cells, 1/(1-rate) for kept.

    The mask is a pure function of (seed, shape, rate), generated with a
    counter-based Philox stream so results are bit-reproducible.
    """
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    rng = np.random.Generator(np.random.Philox(seed))
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate, seed, training):
    """Zero cells with probability ``rate`` and rescale survivors (training only)."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    return Grid._wrap(x.data * dropout_mask(x.shape, rate, seed))


def dropout_backward(shape, rate, seed, training, grad_out):
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if not training or rate == 0.0:
        return grad_out
    return grad_out * dropout_mask(shape, rate, seed)
