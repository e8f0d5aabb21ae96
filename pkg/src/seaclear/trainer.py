"""Loss assembly, synthetic datasets, and the two desk-scale training loops.

The self-supervised run re-synthesizes each hazy input from its own
predicted clear image and transmission map and penalizes the mismatch, so
no clean ground truth ever reaches a gradient; stored clear images are used
for PSNR bookkeeping only. The warp benchmark trains a small shape
classifier with an optional affine or perspective transformer between the
shared feature extractor and the classifier head.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .dcp import DEFAULT_FRACTION, dark_channel_loss, estimate_background_light
from .deblur import DeblurParams, deblur_backward, deblur_forward
from .deblur import params_dict as deblur_params_dict
from .errors import DimensionError, EvaluationError, ParameterError, SingularTransformError
from .grid import Grid
from .imaging import T_MIN, reconstruct_hazy, reconstruct_hazy_backward, synthesize_hazy, transmission_from_depth
from .ops import (
    activation,
    activation_backward,
    conv2d,
    conv2d_backward,
    dropout_mask,
    init_conv,
)
from .optim import AdamState, adam_step
from .stn import IDENTITY_AFFINE, IDENTITY_THETA, LocParams, stn_backward, stn_forward
from .transmission import TransNetParams, transmission_backward, transmission_forward
from .transmission import params_dict as trans_params_dict

EXTRACTOR_WIDTHS = (8, 16, 32)
STN_MODES = ("none", "affine", "perspective")


@dataclass
class TrainConfig:
    """Run configuration; defaults are the desk-scale reference values."""

    learning_rate: float = 1e-3
    batch_size: int = 4
    epochs: int = 60
    dropout_rate: float = 0.0
    lambda_dcp: float = 0.1
    patch: int = 3
    seed: int = 42
    image_size: int = 64
    n_images: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.learning_rate < 0:
            raise ParameterError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.lambda_dcp < 0:
            raise ParameterError(f"lambda_dcp must be >= 0, got {self.lambda_dcp}")
        if self.patch < 1 or self.patch % 2 == 0:
            raise ParameterError(f"patch must be odd and >= 1, got {self.patch}")
        if self.image_size < 16 or self.image_size % 16:
            raise ParameterError(f"image_size must be a positive multiple of 16, got {self.image_size}")
        if self.n_images < 1:
            raise ParameterError(f"n_images must be >= 1, got {self.n_images}")

    @classmethod
    def paper_profile(cls):
        """Full-scale hyperparameters: 512x512, batch 16, lr 1e-4, dropout 0.3."""
        return cls(
            learning_rate=1e-4,
            batch_size=16,
            epochs=150,
            dropout_rate=0.3,
            lambda_dcp=0.1,
            patch=15,
            seed=42,
            image_size=512,
            n_images=64,
        )

    @classmethod
    def stn_benchmark(cls, seed=0):
        """Defaults for the viewpoint-invariance shape benchmark."""
        return cls(
            learning_rate=2e-3,
            batch_size=8,
            epochs=24,
            dropout_rate=0.0,
            lambda_dcp=0.0,
            patch=3,
            seed=seed,
            image_size=32,
            n_images=192,
        )


@dataclass
class EpochRecord:
    epoch: int
    loss_rec: float = None
    loss_dcp: float = None
    loss_total: float = None
    psnr_pred: float = None
    psnr_hazy: float = None
    accuracy: float = None


CSV_HEADER = "epoch,loss_rec,loss_dcp,loss_total,psnr_pred,psnr_hazy,accuracy"


def _csv_cell(value):
    return "" if value is None else repr(value)


@dataclass
class Metrics:
    """Per-epoch training records with a canonical CSV rendering."""

    records: list = field(default_factory=list)

    def to_csv(self):
        lines = [CSV_HEADER]
        for r in self.records:
            lines.append(
                ",".join(
                    [str(r.epoch)]
                    + [
                        _csv_cell(v)
                        for v in (r.loss_rec, r.loss_dcp, r.loss_total, r.psnr_pred, r.psnr_hazy, r.accuracy)
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="\n") as f:
            f.write(self.to_csv())


def psnr(pred, truth):
    """Peak signal-to-noise ratio in dB for values on a [0, 1] scale.

    Capped at 100 dB once the mean squared error drops below 1e-10.
    """
    if pred.shape != truth.shape:
        raise DimensionError(f"psnr: shapes differ, {pred.shape} vs {truth.shape}")
    mse = float(np.mean((pred.data - truth.data) ** 2))
    if mse < 1e-10:
        return 100.0
    return 10.0 * math.log10(1.0 / mse)


@dataclass
class ReconLoss:
    frobenius: float  # reported metric: sqrt of the summed squared difference
    mse: float  # optimization surrogate: squared norm / element count
    grad: np.ndarray  # d(mse)/d(reconstructed)


def reconstruction_loss(reconstructed, original):
    """Frobenius-norm mismatch between the re-synthesized and original image.

    The norm itself has a singular gradient at zero difference, so the
    returned gradient is of the squared norm divided by the element count;
    both values are reported.
    """
    if reconstructed.shape != original.shape:
        raise DimensionError(
            f"reconstruction_loss: shapes differ, {reconstructed.shape} vs {original.shape}"
        )
    diff = reconstructed.data - original.data
    sq = float((diff * diff).sum())
    n = diff.size
    return ReconLoss(math.sqrt(sq), sq / n, 2.0 * diff / n)


@dataclass
class LossBundle:
    frobenius: float
    mse: float
    dcp: float
    total: float
    grad_clear: np.ndarray
    grad_transmission: np.ndarray


def total_loss(original, clear_pred, t_pred, background, config):
    """Self-supervision objective: reconstruction + lambda * dark-channel loss.

    Returns gradients w.r.t. the predicted clear image and transmission map;
    upstream code chains them into the branches.
    """
    reconstructed = reconstruct_hazy(clear_pred, t_pred, background)
    rec = reconstruction_loss(reconstructed, original)
    grad_clear, grad_t = reconstruct_hazy_backward(clear_pred, t_pred, background, rec.grad)
    dcp_val, dcp_grad = dark_channel_loss(clear_pred, config.patch)
    total = rec.mse + config.lambda_dcp * dcp_val
    grad_clear = grad_clear + config.lambda_dcp * dcp_grad
    return LossBundle(rec.frobenius, rec.mse, dcp_val, total, grad_clear, grad_t)


# ---------------------------------------------------------------------------
# Shared feature extractor


def create_extractor(rng, in_channels, widths=EXTRACTOR_WIDTHS):
    """Three 3x3 relu convs, stride 2 on the last two (output at 1/4 resolution)."""
    return [
        init_conv(rng, widths[0], in_channels, 3, stride=1, padding=1),
        init_conv(rng, widths[1], widths[0], 3, stride=2, padding=1),
        init_conv(rng, widths[2], widths[1], 3, stride=2, padding=1),
    ]


def extractor_forward(image, convs, return_cache=False):
    caches = []
    x = image
    for conv in convs:
        z = conv2d(x, conv)
        caches.append((x, z))
        x = activation(z, "relu")
    if return_cache:
        return x, caches
    return x


def extractor_backward(convs, caches, grad_feat, prefix="extractor"):
    grads = {}
    g = grad_feat
    for i in range(len(convs) - 1, -1, -1):
        pre, z = caches[i]
        g = activation_backward(z, "relu", g)
        g, gw, gb = conv2d_backward(pre, convs[i], g)
        grads[f"{prefix}.conv{i}.weights"] = gw
        grads[f"{prefix}.conv{i}.bias"] = gb
    return grads, g


def extractor_params_dict(convs, prefix="extractor"):
    out = {}
    for i, conv in enumerate(convs):
        out[f"{prefix}.conv{i}.weights"] = conv.weights
        out[f"{prefix}.conv{i}.bias"] = conv.bias
    return out


# ---------------------------------------------------------------------------
# Toy shape classifier (warp benchmark head)


@dataclass
class ClassifierParams:
    """Two stride-2 relu convs and a fully connected softmax head."""

    conv1: object
    conv2: object
    fc_w: np.ndarray
    fc_b: np.ndarray

    @classmethod
    def create(cls, rng, in_channels, in_h, in_w, widths=(16, 16), n_classes=3):
        conv1 = init_conv(rng, widths[0], in_channels, 3, stride=2, padding=1)
        conv2 = init_conv(rng, widths[1], widths[0], 3, stride=2, padding=1)
        h = ((in_h + 1) // 2 + 1) // 2
        w = ((in_w + 1) // 2 + 1) // 2
        flat = widths[1] * h * w
        scale = 1.0 / math.sqrt(flat)
        fc_w = rng.normal(0.0, scale, size=(n_classes, flat))
        fc_b = np.zeros(n_classes)
        return cls(conv1, conv2, fc_w, fc_b)


def classifier_params_dict(params, prefix="classifier"):
    return {
        f"{prefix}.conv1.weights": params.conv1.weights,
        f"{prefix}.conv1.bias": params.conv1.bias,
        f"{prefix}.conv2.weights": params.conv2.weights,
        f"{prefix}.conv2.bias": params.conv2.bias,
        f"{prefix}.fc.weights": params.fc_w,
        f"{prefix}.fc.bias": params.fc_b,
    }


def classifier_forward(feat, params, drop_rate=0.0, drop_seed=0, training=False, return_cache=False):
    z1 = conv2d(feat, params.conv1)
    a1 = activation(z1, "relu")
    z2 = conv2d(a1, params.conv2)
    a2 = activation(z2, "relu")
    flat = a2.data.ravel()
    if training and drop_rate > 0.0:
        mask = dropout_mask(flat.shape, drop_rate, drop_seed)
    else:
        mask = None
    dropped = flat if mask is None else flat * mask
    logits = params.fc_w @ dropped + params.fc_b
    if return_cache:
        return logits, (feat, z1, a1, z2, a2, dropped, mask)
    return logits


def classifier_backward(params, cache, grad_logits, prefix="classifier"):
    feat, z1, a1, z2, a2, dropped, mask = cache
    g_fc_w = np.outer(grad_logits, dropped)
    g_fc_b = np.asarray(grad_logits, dtype=np.float64).copy()
    g_flat = params.fc_w.T @ grad_logits
    if mask is not None:
        g_flat = g_flat * mask
    g_a2 = g_flat.reshape(a2.shape)
    g_z2 = activation_backward(z2, "relu", g_a2)
    g_a1, g_w2, g_b2 = conv2d_backward(a1, params.conv2, g_z2)
    g_z1 = activation_backward(z1, "relu", g_a1)
    g_feat, g_w1, g_b1 = conv2d_backward(feat, params.conv1, g_z1)
    grads = {
        f"{prefix}.conv1.weights": g_w1,
        f"{prefix}.conv1.bias": g_b1,
        f"{prefix}.conv2.weights": g_w2,
        f"{prefix}.conv2.bias": g_b2,
        f"{prefix}.fc.weights": g_fc_w,
        f"{prefix}.fc.bias": g_fc_b,
    }
    return grads, g_feat


def softmax(logits):
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# Model state


@dataclass
class ModelState:
    """All learnable parameter groups plus their Adam moments."""

    extractor: list
    trans: TransNetParams = None
    deblur: DeblurParams = None
    loc: LocParams = None
    classifier: ClassifierParams = None
    adam: dict = field(default_factory=dict)

    def params(self):
        out = extractor_params_dict(self.extractor)
        if self.trans is not None:
            out.update(trans_params_dict(self.trans))
        if self.deblur is not None:
            out.update(deblur_params_dict(self.deblur))
        if self.loc is not None:
            for key, arr in (
                ("loc.conv1.weights", self.loc.conv1.weights),
                ("loc.conv1.bias", self.loc.conv1.bias),
                ("loc.conv2.weights", self.loc.conv2.weights),
                ("loc.conv2.bias", self.loc.conv2.bias),
                ("loc.fc.weights", self.loc.fc_w),
                ("loc.fc.bias", self.loc.fc_b),
            ):
                out[key] = arr
        if self.classifier is not None:
            out.update(classifier_params_dict(self.classifier))
        return out

    def init_adam(self):
        self.adam = {name: AdamState.for_params(arr) for name, arr in self.params().items()}

    def snapshot(self):
        return {name: arr.copy() for name, arr in self.params().items()}


def _stream(seed, stream_id):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream_id])))


LOC_LR_SCALE = 0.15  # warp parameters move slowly or training dives into the horizon
LOC_HEAD_DECAY = 0.02  # pulls the warp head toward the identity transform


def _apply_updates(model, all_params, grad_acc, scale, lr):
    for name, arr in all_params.items():
        grad = grad_acc[name] * scale
        group_lr = lr * LOC_LR_SCALE if name.startswith("loc.") else lr
        new_p, model.adam[name] = adam_step(arr, grad, model.adam[name], group_lr)
        arr[...] = new_p


def _accumulate(grad_acc, grads):
    for name, g in grads.items():
        grad_acc[name] += g


# ---------------------------------------------------------------------------
# Synthetic underwater dataset


@dataclass
class UnderwaterSample:
    clear: Grid
    depth: Grid
    hazy: Grid
    transmission: Grid  # one channel per image channel (wavelength-dependent)
    background: np.ndarray


# High texture frequencies make every small patch sample each channel's low
# tail, and the gamma curve piles mass near the dark floor: together they
# give the clear images a genuinely dark dark-channel, the statistic the
# dark-channel loss relies on.
TEXTURE_FREQ = (4.0, 14.0)
TEXTURE_GAMMA = 2.0
DEPTH_RANGE = (0.8, 2.4)
BETA_BASE = (0.5, 0.9)
BETA_JITTER = 0.1


def _procedural_texture(rng, channels, size):
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, size), np.linspace(0.0, 1.0, size), indexing="ij")
    img = np.zeros((channels, size, size))
    for c in range(channels):
        for _ in range(3):
            fx, fy = rng.uniform(*TEXTURE_FREQ, size=2)
            px, py = rng.uniform(0.0, 2.0 * np.pi, size=2)
            amp = rng.uniform(0.4, 1.0)
            img[c] += amp * np.sin(2 * np.pi * fx * xx + px) * np.sin(2 * np.pi * fy * yy + py)
        lo, hi = img[c].min(), img[c].max()
        img[c] = 0.05 + 0.9 * ((img[c] - lo) / (hi - lo)) ** TEXTURE_GAMMA
    return img


def _smooth_depth(rng, size):
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, size), np.linspace(0.0, 1.0, size), indexing="ij")
    direction = rng.uniform(0.0, 2.0 * np.pi)
    d = np.cos(direction) * xx + np.sin(direction) * yy
    for _ in range(2):
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        sigma = rng.uniform(0.15, 0.35)
        amp = rng.uniform(-0.8, 0.8)
        d = d + amp * np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2)))
    lo, hi = d.min(), d.max()
    return DEPTH_RANGE[0] + (DEPTH_RANGE[1] - DEPTH_RANGE[0]) * (d - lo) / (hi - lo)


def gen_underwater_dataset(n, size, seed):
    """Seeded synthetic scenes: texture, depth, haze, and their true physics.

    Background light is biased blue-green (channels 1 and 2 brighter than
    channel 0), attenuation is per channel, and the stored transmission is
    the clamped map actually used for synthesis so inversion round-trips
    exactly.
    """
    if size % 16:
        raise DimensionError(f"size must be divisible by 16, got {size}")
    rng = _stream(seed, 100)
    samples = []
    for _ in range(n):
        clear = Grid._wrap(_procedural_texture(rng, 3, size))
        depth = Grid._wrap(_smooth_depth(rng, size)[None])
        base = rng.uniform(*BETA_BASE)
        beta = np.clip(base + rng.uniform(-BETA_JITTER, BETA_JITTER, size=3), 0.2, 1.0)
        background = np.array(
            [rng.uniform(0.6, 0.75), rng.uniform(0.72, 0.9), rng.uniform(0.72, 0.9)]
        )
        raw_t = transmission_from_depth(depth, beta)
        t = Grid._wrap(np.clip(raw_t.data, T_MIN, 1.0))
        hazy = synthesize_hazy(clear, t, background)
        samples.append(UnderwaterSample(clear, depth, hazy, t, background))
    return samples


# ---------------------------------------------------------------------------
# Self-supervised deblur training


def init_deblur_model(config, image_channels=3):
    rng_ext = _stream(config.seed, 1)
    rng_trans = _stream(config.seed, 2)
    rng_deblur = _stream(config.seed, 3)
    model = ModelState(
        extractor=create_extractor(rng_ext, image_channels),
        trans=TransNetParams.create(rng_trans, image_channels),
        deblur=DeblurParams.create(rng_deblur, EXTRACTOR_WIDTHS[-1], image_channels, reduce_channels=8),
    )
    model.init_adam()
    return model


def deblur_step(hazy, background, model, config, drop_seed, training=True):
    """Forward + backward for one image; returns (bundle, clear_pred, grads)."""
    feat, ext_cache = extractor_forward(hazy, model.extractor, return_cache=True)
    if training and config.dropout_rate > 0.0:
        mask = dropout_mask(feat.shape, config.dropout_rate, drop_seed)
        feat_used = Grid._wrap(feat.data * mask)
    else:
        mask = None
        feat_used = feat
    clear_pred, deb_cache = deblur_forward(hazy, feat_used, model.deblur, return_cache=True)
    t_pred, trans_cache = transmission_forward(hazy, model.trans, return_cache=True)
    bundle = total_loss(hazy, clear_pred, t_pred, background, config)

    deb_grads, g_feat = deblur_backward(model.deblur, deb_cache, bundle.grad_clear)
    trans_grads, _ = transmission_backward(model.trans, trans_cache, bundle.grad_transmission)
    if mask is not None:
        g_feat = g_feat * mask
    ext_grads, _ = extractor_backward(model.extractor, ext_cache, g_feat)
    grads = {**deb_grads, **trans_grads, **ext_grads}
    return bundle, clear_pred, grads


def train_selfsup_deblur(config, dataset=None):
    """Self-supervised deblurring on seeded synthetic scenes.

    The stored clear images feed PSNR records only; gradients see nothing
    but the hazy inputs and their estimated background light. Returns the
    trained model and per-epoch metrics. Deterministic for a fixed config.
    """
    config.validate()
    if dataset is None:
        dataset = gen_underwater_dataset(config.n_images, config.image_size, config.seed)
    model = init_deblur_model(config, image_channels=dataset[0].hazy.channels)
    all_params = model.params()
    backgrounds = [
        estimate_background_light(s.hazy, config.patch, DEFAULT_FRACTION) for s in dataset
    ]
    psnr_hazy = float(np.median([psnr(s.hazy, s.clear) for s in dataset]))
    shuffle_rng = _stream(config.seed, 4)
    metrics = Metrics()
    global_step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(dataset))
        ep_frob, ep_dcp, ep_total, ep_psnr = [], [], [], []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grad_acc = {name: np.zeros_like(arr) for name, arr in all_params.items()}
            for idx in batch:
                sample = dataset[idx]
                bundle, clear_pred, grads = deblur_step(
                    sample.hazy, backgrounds[idx], model, config, drop_seed=config.seed * 1_000_003 + global_step
                )
                if not np.isfinite(bundle.total):
                    raise EvaluationError(
                        f"non-finite loss at epoch {epoch}, step {global_step}, image {idx}"
                    )
                _accumulate(grad_acc, grads)
                ep_frob.append(bundle.frobenius)
                ep_dcp.append(bundle.dcp)
                ep_total.append(bundle.total)
                ep_psnr.append(psnr(clear_pred, sample.clear))
                global_step += 1
            _apply_updates(model, all_params, grad_acc, 1.0 / len(batch), config.learning_rate)
        metrics.records.append(
            EpochRecord(
                epoch=epoch,
                loss_rec=float(np.mean(ep_frob)),
                loss_dcp=float(np.mean(ep_dcp)),
                loss_total=float(np.mean(ep_total)),
                psnr_pred=float(np.median(ep_psnr)),
                psnr_hazy=psnr_hazy,
            )
        )
    return model, metrics


# ---------------------------------------------------------------------------
# Shape dataset and the warp benchmark


@dataclass
class ShapesDataset:
    images: list
    labels: np.ndarray


def _render_shape(rng, size, label):
    canvas = rng.uniform(0.0, 0.25, size=(size, size))
    value = rng.uniform(0.75, 1.0)
    cx, cy = rng.uniform(0.32 * size, 0.68 * size, size=2)
    radius = rng.uniform(0.24, 0.34) * size
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if label == 0:  # square
        mask = (np.abs(xx - cx) <= radius * 0.78) & (np.abs(yy - cy) <= radius * 0.78)
    elif label == 1:  # triangle (apex up)
        x0, y0 = cx, cy - radius
        x1, y1 = cx - 0.95 * radius, cy + 0.75 * radius
        x2, y2 = cx + 0.95 * radius, cy + 0.75 * radius

        def half_plane(ax, ay, bx, by):
            return (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)

        # vertices run clockwise in image coordinates (y grows downward)
        d0 = half_plane(x0, y0, x1, y1)
        d1 = half_plane(x1, y1, x2, y2)
        d2 = half_plane(x2, y2, x0, y0)
        mask = (d0 <= 0) & (d1 <= 0) & (d2 <= 0)
    else:  # disc
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
    canvas = np.where(mask, value, canvas)
    return canvas[None]


def _random_view_homography(rng):
    # Distortions are predominantly projective (the pose family the
    # perspective warp can invert and the affine one cannot); the affine
    # jitter stays mild.
    angle = rng.uniform(-0.15, 0.15)
    scale = rng.uniform(0.9, 1.1)
    shear = rng.uniform(-0.05, 0.05)
    tx, ty = rng.uniform(-0.1, 0.1, size=2)
    p1, p2 = rng.uniform(-0.3, 0.3, size=2)
    theta = (
        scale * np.cos(angle),
        -scale * np.sin(angle) + shear,
        tx,
        scale * np.sin(angle),
        scale * np.cos(angle),
        ty,
        p1,
        p2,
    )
    return theta


def gen_shapes_dataset(n, size, distort, seed):
    """Balanced squares/triangles/discs, optionally under random homographies."""
    from .stn import Homography, bilinear_sample, make_grid

    if size < 16:
        raise ParameterError(f"size must be >= 16, got {size}")
    rng = _stream(seed, 200)
    labels = rng.permutation(np.arange(n) % 3)
    images = []
    for label in labels:
        img = _render_shape(rng, size, int(label))
        if distort:
            theta = _random_view_homography(rng)
            grid = make_grid(Homography(theta), size, size)
            img = bilinear_sample(Grid._wrap(img), grid).data
        images.append(Grid._wrap(img))
    return ShapesDataset(images, labels)


def init_stn_model(mode, config, image_channels=1):
    if mode not in STN_MODES:
        raise ParameterError(f"mode must be one of {STN_MODES}, got {mode!r}")
    rng_ext = _stream(config.seed, 11)
    rng_loc = _stream(config.seed, 12)
    rng_cls = _stream(config.seed, 13)
    extractor = create_extractor(rng_ext, image_channels)
    feat_h = config.image_size // 4
    feat_w = config.image_size // 4
    loc = None
    if mode != "none":
        loc = LocParams.create(
            rng_loc,
            EXTRACTOR_WIDTHS[-1],
            feat_h,
            feat_w,
            out_dim=8 if mode == "perspective" else 6,
        )
    classifier = ClassifierParams.create(rng_cls, EXTRACTOR_WIDTHS[-1], feat_h, feat_w)
    model = ModelState(extractor=extractor, loc=loc, classifier=classifier)
    model.init_adam()
    return model


def _classify(image, model, config, drop_seed=0, training=False, return_caches=False):
    feat, ext_cache = extractor_forward(image, model.extractor, return_cache=True)
    if model.loc is not None:
        warped, stn_cache = stn_forward(feat, model.loc, return_cache=True)
    else:
        warped, stn_cache = feat, None
    logits, cls_cache = classifier_forward(
        warped,
        model.classifier,
        drop_rate=config.dropout_rate,
        drop_seed=drop_seed,
        training=training,
        return_cache=True,
    )
    if return_caches:
        return logits, (feat, ext_cache, stn_cache, cls_cache)
    return logits


def _stn_accuracy(dataset, model, config):
    correct = 0
    for img, label in zip(dataset.images, dataset.labels):
        try:
            logits = _classify(img, model, config)
        except SingularTransformError:
            continue  # a warp past the horizon counts as a miss
        correct += int(np.argmax(logits) == label)
    return correct / len(dataset.images)


def train_stn_classifier(mode, config, distort=True, train_set=None, test_set=None):
    """Train the toy shape classifier with an optional warp module.

    ``mode`` selects no transformer, the 6-parameter affine one, or the
    8-parameter perspective one. Held-out accuracy is recorded per epoch.
    Deterministic for fixed (mode, config).
    """
    config.validate()
    if train_set is None:
        train_set = gen_shapes_dataset(config.n_images, config.image_size, distort, config.seed)
    if test_set is None:
        test_set = gen_shapes_dataset(
            max(60, config.n_images // 2), config.image_size, distort, config.seed + 7919
        )
    model = init_stn_model(mode, config, image_channels=train_set.images[0].channels)
    all_params = model.params()
    shuffle_rng = _stream(config.seed, 14)
    metrics = Metrics()
    global_step = 0
    n = len(train_set.images)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        ep_loss = []
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            grad_acc = {name: np.zeros_like(arr) for name, arr in all_params.items()}
            for idx in batch:
                image = train_set.images[idx]
                label = int(train_set.labels[idx])
                try:
                    logits, (feat, ext_cache, stn_cache, cls_cache) = _classify(
                        image,
                        model,
                        config,
                        drop_seed=config.seed * 1_000_003 + global_step,
                        training=True,
                        return_caches=True,
                    )
                except SingularTransformError:
                    # No gradient from a warp past the horizon; the identity
                    # pull on the head recovers over the next batches.
                    global_step += 1
                    continue
                p = softmax(logits)
                loss = -math.log(max(p[label], 1e-300))
                if not np.isfinite(loss):
                    raise EvaluationError(f"non-finite loss at epoch {epoch}, step {global_step}")
                grad_logits = p.copy()
                grad_logits[label] -= 1.0
                cls_grads, g_warped = classifier_backward(model.classifier, cls_cache, grad_logits)
                if stn_cache is not None:
                    loc_grads, g_feat = stn_backward(stn_cache, g_warped)
                    loc_grads = {f"loc.{k}": v for k, v in loc_grads.items()}
                else:
                    loc_grads, g_feat = {}, g_warped
                ext_grads, _ = extractor_backward(model.extractor, ext_cache, g_feat)
                _accumulate(grad_acc, {**cls_grads, **loc_grads, **ext_grads})
                ep_loss.append(loss)
                global_step += 1
            if model.loc is not None:
                identity = np.array(IDENTITY_THETA if model.loc.out_dim == 8 else IDENTITY_AFFINE)
                grad_acc["loc.fc.weights"] += LOC_HEAD_DECAY * len(batch) * model.loc.fc_w
                grad_acc["loc.fc.bias"] += LOC_HEAD_DECAY * len(batch) * (model.loc.fc_b - identity)
            _apply_updates(model, all_params, grad_acc, 1.0 / len(batch), config.learning_rate)
        metrics.records.append(
            EpochRecord(
                epoch=epoch,
                loss_total=float(np.mean(ep_loss)),
                accuracy=_stn_accuracy(test_set, model, config),
            )
        )
    return model, metrics
