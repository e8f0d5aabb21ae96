"""Physical model of hazy underwater image formation and its exact inversion.

A hazy image is a per-pixel convex blend of the clear scene and the ambient
background light: hazy = clear * t + background * (1 - t), where the
transmission t = exp(-beta * depth) is the fraction of scene radiance that
survives the water path. Transmission grids may carry one shared channel or
one channel per image channel (wavelength-dependent attenuation).
"""

import numpy as np

from .errors import DimensionError, DomainError
from .grid import Grid

# Inversions divide by t; below this floor the division is ill-conditioned.
T_MIN = 0.1


def as_channel_vector(value, channels, name):
    """Broadcast a scalar or per-channel sequence to a (channels,) array."""
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a scalar or a flat per-channel sequence")
    if arr.size == 1:
        arr = np.full(channels, arr[0])
    if arr.size != channels:
        raise DimensionError(f"{name} has {arr.size} entries, expected {channels} (one per channel)")
    return arr


def _check_transmission_shape(t, image):
    if t.channels not in (1, image.channels):
        raise DimensionError(
            f"transmission has {t.channels} channels, expected 1 or {image.channels}"
        )
    if (t.height, t.width) != (image.height, image.width):
        raise DimensionError(
            f"transmission is {t.height}x{t.width}, image is {image.height}x{image.width}"
        )


def transmission_from_depth(depth, beta):
    """t = exp(-beta * depth), one output channel per beta entry."""
    if depth.channels != 1:
        raise DimensionError(f"depth map must have 1 channel, got {depth.channels}")
    if np.any(depth.data < 0):
        raise DomainError("depth values must be >= 0")
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    if np.any(beta < 0):
        raise DomainError("attenuation coefficients must be >= 0")
    return Grid._wrap(np.exp(-beta[:, None, None] * depth.data[0]))


def _blend(clear_data, t, background):
    td = t.data
    return clear_data * td + background[:, None, None] * (1.0 - td)


def synthesize_hazy(clear, transmission, background):
    """Blend a clear image toward the background light: clear*t + bg*(1-t)."""
    _check_transmission_shape(transmission, clear)
    bg = as_channel_vector(background, clear.channels, "background light")
    if np.any(clear.data < 0) or np.any(clear.data > 1):
        raise DomainError("clear image values must lie in [0, 1]")
    if np.any(transmission.data <= 0) or np.any(transmission.data > 1):
        raise DomainError("transmission values must lie in (0, 1]")
    if np.any(bg < 0) or np.any(bg > 1):
        raise DomainError("background light must lie in [0, 1] per channel")
    return Grid._wrap(_blend(clear.data, transmission, bg))


def reconstruct_hazy(clear_pred, transmission_pred, background):
    """Same blend as synthesize_hazy, against predicted quantities.

    Predictions may leave [0, 1] mid-training, so no range validation here;
    use reconstruct_hazy_backward to route gradients to both predictions.
    """
    _check_transmission_shape(transmission_pred, clear_pred)
    bg = as_channel_vector(background, clear_pred.channels, "background light")
    return Grid._wrap(_blend(clear_pred.data, transmission_pred, bg))


def reconstruct_hazy_backward(clear_pred, transmission_pred, background, grad_out):
    """Gradients of the blend w.r.t. the predicted clear image and transmission."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != clear_pred.shape:
        raise DimensionError(
            f"upstream gradient shape {grad_out.shape} != image shape {clear_pred.shape}"
        )
    bg = as_channel_vector(background, clear_pred.channels, "background light")
    grad_clear = grad_out * transmission_pred.data
    grad_t = grad_out * (clear_pred.data - bg[:, None, None])
    if transmission_pred.channels == 1:
        grad_t = grad_t.sum(axis=0, keepdims=True)
    return grad_clear, grad_t


def invert_direct(hazy, transmission, background, display=False):
    """Exact inversion of the blend: clear = (hazy - bg*(1-t)) / t.

    Requires t >= T_MIN everywhere. In display mode the result is clamped to
    [0, 1]; otherwise it is returned untouched so round trips are exact.
    """
    _check_transmission_shape(transmission, hazy)
    bg = as_channel_vector(background, hazy.channels, "background light")
    td = transmission.data
    if np.any(td < T_MIN):
        raise DomainError(
            f"transmission below {T_MIN} makes the inversion ill-conditioned "
            f"(min was {td.min():.6g})"
        )
    clear = (hazy.data - bg[:, None, None] * (1.0 - td)) / td
    if display:
        clear = np.clip(clear, 0.0, 1.0)
    return Grid._wrap(clear)
