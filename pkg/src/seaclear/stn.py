"""Differentiable perspective warping: localization, grid generation, sampling.

Coordinates are normalized to [-1, 1] with align-corners semantics, so -1
and +1 land exactly on the first and last pixel centers. The warp family is
the 8-parameter homography (bottom-right matrix entry fixed at 1); the
6-parameter affine family embeds as the special case with zero perspective
terms. Sampling out of bounds contributes zero (zero padding), which keeps
gradients defined at the border.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, SingularTransformError
from .grid import Grid
from .ops import ConvParams, activation, activation_backward, conv2d, conv2d_backward, init_conv

# Grid generation refuses homographies whose projective depth |z| dips below
# this anywhere on the target grid; clamping instead would corrupt gradients.
Z_MIN = 1e-3

IDENTITY_THETA = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)
IDENTITY_AFFINE = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


@dataclass(frozen=True)
class Homography:
    """8 perspective-transform parameters (row-major, bottom-right fixed at 1)."""

    theta: np.ndarray

    def __post_init__(self):
        arr = np.array(self.theta, dtype=np.float64).ravel()
        if arr.shape != (8,):
            raise DimensionError(f"homography needs exactly 8 parameters, got {arr.size}")
        arr.setflags(write=False)
        object.__setattr__(self, "theta", arr)

    @classmethod
    def identity(cls):
        return cls(IDENTITY_THETA)

    def matrix(self):
        m = np.append(self.theta, 1.0).reshape(3, 3)
        return m


@dataclass(frozen=True)
class SamplingGrid:
    """Normalized source coordinates per target pixel, shape (H, W, 2) as (x, y)."""

    coords: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coords, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise DimensionError(f"sampling grid must have shape (H, W, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("sampling grid contains non-finite coordinates")
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)

    @property
    def height(self):
        return self.coords.shape[0]

    @property
    def width(self):
        return self.coords.shape[1]


def normalized_axis(n):
    """Align-corners normalized coordinates of n pixel centers."""
    if n == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n)


def _target_mesh(out_h, out_w):
    xs = normalized_axis(out_w)
    ys = normalized_axis(out_h)
    return np.meshgrid(xs, ys)  # each (out_h, out_w)


def make_grid(homography, out_h, out_w):
    """Map the regular target grid through a homography: (x,y,z) = M.(xt,yt,1)."""
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"grid size must be >= 1, got {out_h}x{out_w}")
    m = homography.matrix()
    if abs(np.linalg.det(m)) < 1e-12:
        raise SingularTransformError("homography matrix is singular")
    xt, yt = _target_mesh(out_h, out_w)
    z = m[2, 0] * xt + m[2, 1] * yt + 1.0
    if np.any(np.abs(z) < Z_MIN):
        raise SingularTransformError(
            f"singular transform: |z| fell below {Z_MIN} on the target grid"
        )
    x = (m[0, 0] * xt + m[0, 1] * yt + m[0, 2]) / z
    y = (m[1, 0] * xt + m[1, 1] * yt + m[1, 2]) / z
    return SamplingGrid(np.stack([x, y], axis=-1))


def make_grid_backward(homography, out_h, out_w, grad_coords):
    """Gradient of make_grid w.r.t. the 8 parameters, given d(loss)/d(coords)."""
    grad_coords = np.asarray(grad_coords, dtype=np.float64)
    if grad_coords.shape != (out_h, out_w, 2):
        raise DimensionError(
            f"coordinate gradient shape {grad_coords.shape} != ({out_h}, {out_w}, 2)"
        )
    m = homography.matrix()
    xt, yt = _target_mesh(out_h, out_w)
    z = m[2, 0] * xt + m[2, 1] * yt + 1.0
    xs = (m[0, 0] * xt + m[0, 1] * yt + m[0, 2]) / z
    ys = (m[1, 0] * xt + m[1, 1] * yt + m[1, 2]) / z
    gx = grad_coords[..., 0] / z
    gy = grad_coords[..., 1] / z
    grad = np.empty(8)
    grad[0] = (gx * xt).sum()
    grad[1] = (gx * yt).sum()
    grad[2] = gx.sum()
    grad[3] = (gy * xt).sum()
    grad[4] = (gy * yt).sum()
    grad[5] = gy.sum()
    mix = gx * xs + gy * ys
    grad[6] = -(mix * xt).sum()
    grad[7] = -(mix * yt).sum()
    return grad


def embed_affine(theta6):
    """Lift 6 affine parameters into the homography chart (zero perspective)."""
    arr = np.asarray(theta6, dtype=np.float64).ravel()
    if arr.shape != (6,):
        raise DimensionError(f"affine transform needs exactly 6 parameters, got {arr.size}")
    return Homography(np.concatenate([arr, [0.0, 0.0]]))


def affine_grid(theta6, out_h, out_w):
    """Sampling grid for an affine transform (z is identically 1)."""
    return make_grid(embed_affine(theta6), out_h, out_w)


def _snap_to_lattice(p, scale):
    # Absorb normalize/unnormalize roundoff: anything within scale*2^-45 of
    # an integer pixel is that pixel, so identity grids sample exactly.
    r = np.round(p)
    tol = max(scale, 1.0) * 2.0**-45
    return np.where(np.abs(p - r) <= tol, r, p)


def _to_pixels(coords, h, w):
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    px = _snap_to_lattice(coords[..., 0] * cx + cx, cx)
    py = _snap_to_lattice(coords[..., 1] * cy + cy, cy)
    return px, py


def _corner_gather(data, iy, ix):
    c, h, w = data.shape
    valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    flat = np.clip(iy, 0, h - 1) * w + np.clip(ix, 0, w - 1)
    vals = data.reshape(c, -1)[:, flat.ravel()].reshape((c,) + iy.shape)
    return vals * valid, valid, flat


def bilinear_sample(x, grid, return_cache=False):
    """Sample a grid at normalized coordinates with a 2x2 bilinear kernel."""
    px, py = _to_pixels(grid.coords, x.height, x.width)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0
    v00, m00, f00 = _corner_gather(x.data, y0, x0)
    v01, m01, f01 = _corner_gather(x.data, y0, x0 + 1)
    v10, m10, f10 = _corner_gather(x.data, y0 + 1, x0)
    v11, m11, f11 = _corner_gather(x.data, y0 + 1, x0 + 1)
    out = (
        v00 * (1 - fy) * (1 - fx)
        + v01 * (1 - fy) * fx
        + v10 * fy * (1 - fx)
        + v11 * fy * fx
    )
    result = Grid._wrap(out)
    if return_cache:
        cache = (x, grid, fx, fy, (v00, v01, v10, v11), (m00, m01, m10, m11), (f00, f01, f10, f11))
        return result, cache
    return result


def bilinear_sample_backward(x, grid, grad_out, cache=None):
    """Gradients of bilinear sampling w.r.t. input values and grid coordinates."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    gh, gw = grid.height, grid.width
    if grad_out.shape != (x.channels, gh, gw):
        raise DimensionError(
            f"upstream gradient shape {grad_out.shape} != ({x.channels}, {gh}, {gw})"
        )
    if cache is None:
        _, cache = bilinear_sample(x, grid, return_cache=True)
    _, _, fx, fy, (v00, v01, v10, v11), masks, flats = cache

    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx

    grad_in = np.zeros(x.size)
    hw = x.height * x.width
    for weight, mask, flat in zip((w00, w01, w10, w11), masks, flats):
        contrib = grad_out * weight * mask  # (c, gh, gw)
        idx = flat.ravel()
        for c in range(x.channels):
            grad_in[c * hw :(c + 1) * hw] += np.bincount(idx, weights=contrib[c].ravel(), minlength=hw)
    grad_in = grad_in.reshape(x.shape)

    # d(out)/d(px) and d(out)/d(py); invalid corners contribute zero value,
    # matching the zero-padding forward.
    d_px = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
    d_py = (1 - fx) * (v10 - v00) + fx * (v11 - v01)
    gx = (grad_out * d_px).sum(axis=0) * (x.width - 1) / 2.0
    gy = (grad_out * d_py).sum(axis=0) * (x.height - 1) / 2.0
    grad_coords = np.stack([gx, gy], axis=-1)
    return grad_in, grad_coords


@dataclass
class LocParams:
    """Localization network: two stride-2 convs and a fully connected head.

    The head emits 8 homography parameters, or 6 when built for the affine
    baseline.
    """

    conv1: ConvParams
    conv2: ConvParams
    fc_w: np.ndarray  # (out_dim, flattened conv2 output)
    fc_b: np.ndarray  # (out_dim,)

    def __post_init__(self):
        self.fc_w = np.asarray(self.fc_w, dtype=np.float64)
        self.fc_b = np.asarray(self.fc_b, dtype=np.float64)
        if self.fc_w.ndim != 2 or self.fc_b.shape != (self.fc_w.shape[0],):
            raise DimensionError("localization head weights and bias disagree")
        if self.fc_b.shape[0] not in (6, 8):
            raise DimensionError(
                f"localization head must emit 6 or 8 parameters, got {self.fc_b.shape[0]}"
            )

    @property
    def out_dim(self):
        return self.fc_b.shape[0]

    @classmethod
    def create(cls, rng, in_channels, in_h, in_w, hidden=(8, 16), out_dim=8, head_offset=None):
        """Identity-initialized localization net for in_channels x in_h x in_w inputs.

        Conv weights are random, the head weights are zero and the head bias
        is the identity transform (optionally plus ``head_offset``), so the
        initial warp is the identity; without that, end-to-end training of
        the warp is known to diverge.
        """
        if in_h < 4 or in_w < 4:
            raise DimensionError(f"localization input must be at least 4x4, got {in_h}x{in_w}")
        conv1 = init_conv(rng, hidden[0], in_channels, 3, stride=2, padding=1)
        conv2 = init_conv(rng, hidden[1], hidden[0], 3, stride=2, padding=1)
        h1 = (in_h + 2 - 3) // 2 + 1
        w1 = (in_w + 2 - 3) // 2 + 1
        h2 = (h1 + 2 - 3) // 2 + 1
        w2 = (w1 + 2 - 3) // 2 + 1
        flat = hidden[1] * h2 * w2
        identity = IDENTITY_THETA if out_dim == 8 else IDENTITY_AFFINE
        bias = np.array(identity, dtype=np.float64)
        if head_offset is not None:
            bias = bias + np.asarray(head_offset, dtype=np.float64)
        return cls(conv1, conv2, np.zeros((out_dim, flat)), bias)


def localize_forward(feat, params):
    """Predict warp parameters from a feature grid; returns (theta, cache)."""
    if feat.height < 4 or feat.width < 4:
        raise DimensionError(
            f"localization needs spatial dims >= 4, got {feat.height}x{feat.width}"
        )
    z1 = conv2d(feat, params.conv1)
    a1 = activation(z1, "relu")
    z2 = conv2d(a1, params.conv2)
    a2 = activation(z2, "relu")
    flat = a2.data.ravel()
    if flat.size != params.fc_w.shape[1]:
        raise DimensionError(
            f"localization head expects {params.fc_w.shape[1]} features, got {flat.size}"
        )
    theta = params.fc_w @ flat + params.fc_b
    return theta, (feat, z1, a1, z2, a2, flat)


def localize_backward(params, cache, grad_theta):
    """Gradients of localize_forward w.r.t. params and the input features."""
    feat, z1, a1, z2, a2, flat = cache
    grad_theta = np.asarray(grad_theta, dtype=np.float64)
    g_fc_w = np.outer(grad_theta, flat)
    g_fc_b = grad_theta.copy()
    g_flat = params.fc_w.T @ grad_theta
    g_a2 = g_flat.reshape(a2.shape)
    g_z2 = activation_backward(z2, "relu", g_a2)
    g_a1, g_w2, g_b2 = conv2d_backward(a1, params.conv2, g_z2)
    g_z1 = activation_backward(z1, "relu", g_a1)
    g_feat, g_w1, g_b1 = conv2d_backward(feat, params.conv1, g_z1)
    grads = {"conv1.weights": g_w1, "conv1.bias": g_b1, "conv2.weights": g_w2, "conv2.bias": g_b2, "fc.weights": g_fc_w, "fc.bias": g_fc_b}
    return grads, g_feat


def localize(feat, params):
    """Predict a Homography from features (affine heads are embedded)."""
    theta, _ = localize_forward(feat, params)
    if params.out_dim == 6:
        return embed_affine(theta)
    return Homography(theta)


def stn_forward(feat, params, return_cache=False):
    """Warp features by their own predicted transform; output shape == input shape."""
    theta_raw, loc_cache = localize_forward(feat, params)
    homography = embed_affine(theta_raw) if params.out_dim == 6 else Homography(theta_raw)
    grid = make_grid(homography, feat.height, feat.width)
    out, sample_cache = bilinear_sample(feat, grid, return_cache=True)
    if return_cache:
        return out, (feat, params, loc_cache, homography, grid, sample_cache)
    return out


def stn_backward(cache, grad_out):
    """Gradients of stn_forward w.r.t. localization params and input features."""
    feat, params, loc_cache, homography, grid, sample_cache = cache
    g_feat_sample, g_coords = bilinear_sample_backward(feat, grid, grad_out, cache=sample_cache)
    g_theta8 = make_grid_backward(homography, feat.height, feat.width, g_coords)
    g_theta = g_theta8[:6] if params.out_dim == 6 else g_theta8
    grads, g_feat_loc = localize_backward(params, loc_cache, g_theta)
    return grads, g_feat_sample + g_feat_loc
