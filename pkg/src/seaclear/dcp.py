"""Dark channel prior primitives.

The dark channel of an image is the patch-minimum over channels and a local
neighborhood; in haze-free natural images it sits near zero, and haze lifts
it toward the background light. That statistic drives the background-light
estimator, a classic transmission estimate, and a loss that pulls predicted
clear images back toward a dark dark-channel.

The recovery map R folds transmission and background light into a single
per-pixel coefficient with clear = R * hazy - R + 1, which is the form the
learned deblurring branch predicts directly.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, DomainError, ParameterError
from .grid import Grid
from .imaging import T_MIN, as_channel_vector

DEFAULT_PATCH = 15
DEFAULT_OMEGA = 0.95
DEFAULT_FRACTION = 0.001
# |hazy - 1| is clamped to at least this before dividing in recovery_map.
DENOM_FLOOR = 1e-3


def _check_patch(patch):
    if patch < 1 or patch % 2 == 0:
        raise ParameterError(f"patch size must be odd and >= 1, got {patch}")


def _window_min_1d(arr, patch, axis):
    r = patch // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    padded = np.pad(arr, pad, mode="edge")
    return sliding_window_view(padded, patch, axis=axis).min(axis=-1)


def dark_channel(image, patch):
    """Minimum over channels, then over a patch x patch neighborhood.

    Borders use replicate padding, so a constant image keeps its value.
    """
    _check_patch(patch)
    m = image.data.min(axis=0)
    if patch > 1:
        m = _window_min_1d(m, patch, axis=1)
        m = _window_min_1d(m, patch, axis=0)
    return Grid._wrap(m[None])


def estimate_background_light(image, patch, fraction):
    """Background light from the brightest dark-channel pixels.

    Takes the ceil(fraction * H * W) brightest dark-channel locations and
    returns the channels of the input pixel among them with the largest
    channel sum. Ties break toward the lowest row-major index, so the result
    is deterministic. Returns a (channels,) array.
    """
    _check_patch(patch)
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    n = image.height * image.width
    k = math.ceil(fraction * n)
    dark = dark_channel(image, patch).data.ravel()
    # lexsort: primary key last; stable ascending index breaks ties.
    order = np.lexsort((np.arange(n), -dark))
    candidates = order[:k]
    flat = image.data.reshape(image.channels, n)
    sums = flat[:, candidates].sum(axis=0)
    best = candidates[np.lexsort((candidates, -sums))[0]]
    return flat[:, best].copy()


def estimate_transmission_dcp(image, background, patch, omega):
    """Classic dark-channel transmission estimate, clamped to [T_MIN, 1].

    t = 1 - omega * dark_channel(image / background). Useful as a
    non-learned baseline or initializer target.
    """
    _check_patch(patch)
    if not 0.0 < omega <= 1.0:
        raise ParameterError(f"omega must be in (0, 1], got {omega}")
    bg = as_channel_vector(background, image.channels, "background light")
    if np.any(bg <= 0):
        raise DomainError("background light must be > 0 per channel to normalize by it")
    normalized = Grid._wrap(image.data / bg[:, None, None])
    t = 1.0 - omega * dark_channel(normalized, patch).data
    return Grid._wrap(np.clip(t, T_MIN, 1.0))


def recovery_map(hazy, transmission, background):
    """Per-pixel recovery coefficient equivalent to the direct inversion.

    R = ((hazy - bg)/t + (bg - 1)) / (hazy - 1), with the denominator clamped
    to magnitude >= DENOM_FLOOR; recover_clear(R, hazy) then matches
    invert_direct wherever |hazy - 1| >= DENOM_FLOOR.
    """
    from .imaging import _check_transmission_shape

    _check_transmission_shape(transmission, hazy)
    bg = as_channel_vector(background, hazy.channels, "background light")
    td = transmission.data
    if np.any(td < T_MIN):
        raise DomainError(
            f"transmission below {T_MIN} makes the recovery map ill-conditioned "
            f"(min was {td.min():.6g})"
        )
    denom = hazy.data - 1.0
    clamped = np.where(np.abs(denom) >= DENOM_FLOOR, denom, np.where(denom > 0, DENOM_FLOOR, -DENOM_FLOOR))
    num = (hazy.data - bg[:, None, None]) / td + (bg[:, None, None] - 1.0)
    return Grid._wrap(num / clamped)


def recover_clear(recovery, hazy):
    """clear = R * hazy - R + 1, elementwise."""
    if recovery.shape != hazy.shape:
        raise DimensionError(
            f"recovery map shape {recovery.shape} != image shape {hazy.shape}"
        )
    return Grid._wrap(recovery.data * hazy.data - recovery.data + 1.0)


def recover_clear_backward(recovery, hazy, grad_out):
    """Gradients of recover_clear: d/dR = hazy - 1, d/dhazy = R."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != hazy.shape:
        raise DimensionError(
            f"upstream gradient shape {grad_out.shape} != image shape {hazy.shape}"
        )
    return grad_out * (hazy.data - 1.0), grad_out * recovery.data


def _window_argmin(data, patch):
    # Per output pixel: the window minimum over channels and the patch, plus
    # the flat source index that attains it (ties to the lowest index).
    c, h, w = data.shape
    r = patch // 2
    padded = np.pad(data, ((0, 0), (r, r), (r, r)), mode="edge")
    win = sliding_window_view(padded, (patch, patch), axis=(1, 2))  # (c, h, w, p, p)
    stacked = win.reshape(c, h, w, patch * patch).transpose(0, 3, 1, 2).reshape(c * patch * patch, h, w)
    values = stacked.min(axis=0)
    # Replicate padding means border candidates alias interior pixels; map
    # every candidate to its true source index before breaking ties.
    sy = np.clip(np.arange(patch)[:, None] - r + np.arange(h)[None, :], 0, h - 1)  # (p, h)
    sx = np.clip(np.arange(patch)[:, None] - r + np.arange(w)[None, :], 0, w - 1)  # (p, w)
    spatial = sy[:, None, :, None] * w + sx[None, :, None, :]  # (p, p, h, w)
    source = (
        np.arange(c)[:, None, None, None, None] * (h * w) + spatial[None]
    ).reshape(c * patch * patch, h, w)
    winner = np.where(stacked == values[None], source, c * h * w).min(axis=0)
    return values, winner


def dark_channel_loss(clear_pred, patch):
    """Mean absolute dark channel (L1 pull toward zero), with a subgradient.

    On in-range images the dark channel is nonnegative and this is simply
    its mean; the absolute value keeps the loss nonnegative and the pull
    pointed at zero when predictions stray outside [0, 1] mid-training.
    Returns (loss, grad) where grad routes each output pixel's weight to the
    single element that attained the minimum (ties to the lowest row-major
    index).
    """
    _check_patch(patch)
    values, winner = _window_argmin(clear_pred.data, patch)
    h, w = clear_pred.height, clear_pred.width
    loss = float(np.abs(values).mean())
    grad = np.zeros(clear_pred.size)
    np.add.at(grad, winner.ravel(), np.sign(values).ravel() / (h * w))
    return loss, grad.reshape(clear_pred.shape)
