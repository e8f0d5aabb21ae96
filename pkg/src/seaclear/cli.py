"""Command-line interface.

Exit codes: 0 success, 1 failed verification (gradcheck), 2 usage or
parameter error, 3 domain/singularity error, 4 I/O or file-format error.
"""

import argparse
import sys

import numpy as np

from .dcp import (
    DEFAULT_FRACTION,
    DEFAULT_OMEGA,
    DEFAULT_PATCH,
    estimate_background_light,
    estimate_transmission_dcp,
    recover_clear,
    recovery_map,
)
from .errors import DomainError, FileFormatError, ParameterError
from .gradient_suite import CHECK_TOLERANCE, run_gradient_suite
from .grid import Grid
from .imaging import synthesize_hazy, transmission_from_depth
from .netpbm import read_depth, read_image, write_image
from .runconfig import load_config
from .stn import Homography, bilinear_sample, make_grid
from .trainer import TrainConfig, train_selfsup_deblur, train_stn_classifier
from .weights_io import save_weights

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DOMAIN = 3
EXIT_IO = 4


def _floats(text, count, what):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as e:
        raise ParameterError(f"{what}: expected comma-separated floats, got {text!r}") from e
    if count is not None and len(values) != count:
        raise ParameterError(f"{what}: expected {count} values, got {len(values)}")
    return values


def cmd_synth(args):
    clear = read_image(args.clear)
    depth = read_depth(args.depth)
    beta = _floats(args.beta, None, "--beta")
    if len(beta) not in (1, clear.channels):
        raise ParameterError(f"--beta needs 1 or {clear.channels} values, got {len(beta)}")
    background = _floats(args.bg, None, "--bg")
    if len(background) not in (1, clear.channels):
        raise ParameterError(f"--bg needs 1 or {clear.channels} values, got {len(background)}")
    if len(beta) == 1:
        beta = beta * clear.channels
    t = transmission_from_depth(depth, beta)
    hazy = synthesize_hazy(clear, t, background)
    write_image(args.out, hazy, maxval=args.maxval)
    means = t.data.mean(axis=(1, 2))
    print("mean transmission: " + " ".join(f"{m:.4f}" for m in means))
    return EXIT_OK


def cmd_dehaze(args):
    hazy = read_image(args.input)
    background = estimate_background_light(hazy, args.patch, args.fraction)
    t = estimate_transmission_dcp(hazy, background, args.patch, args.omega)
    recovery = recovery_map(hazy, t, background)
    clear = recover_clear(recovery, hazy)
    write_image(args.out, Grid._wrap(np.clip(clear.data, 0.0, 1.0)), maxval=args.maxval)
    if args.save_t:
        write_image(args.save_t, t, maxval=65535)
    print("background light: " + " ".join(f"{c:.4f}" for c in background))
    print(f"mean transmission: {t.data.mean():.4f}")
    return EXIT_OK


def cmd_warp(args):
    image = read_image(args.input)
    theta = _floats(args.theta, 8, "--theta")
    grid = make_grid(Homography(theta), image.height, image.width)
    warped = bilinear_sample(image, grid)
    write_image(args.out, warped, maxval=args.maxval)
    return EXIT_OK


def cmd_gradcheck(args):
    results = run_gradient_suite(seeds=tuple(range(args.seeds)))
    worst = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.max_rel_err)
    failed = False
    for name in sorted(worst):
        status = "ok" if worst[name] < CHECK_TOLERANCE else "FAIL"
        failed = failed or status == "FAIL"
        print(f"{status:4s} {name:40s} max_rel_err={worst[name]:.3e}")
    print(f"{len(results)} checks over {args.seeds} seeds, tolerance {CHECK_TOLERANCE:g}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _load_train_config(args):
    return load_config(args.config) if args.config else None


def cmd_train_deblur(args):
    config = _load_train_config(args) or TrainConfig()
    model, metrics = train_selfsup_deblur(config)
    metrics.write_csv(args.out_csv)
    save_weights(args.out_weights, model.params())
    if metrics.records:
        last = metrics.records[-1]
        print(
            f"epoch {last.epoch}: loss_total={last.loss_total:.6f} "
            f"psnr_pred={last.psnr_pred:.2f} psnr_hazy={last.psnr_hazy:.2f}"
        )
    print(f"metrics -> {args.out_csv}, weights -> {args.out_weights}")
    return EXIT_OK


def cmd_stn_demo(args):
    config = _load_train_config(args) or TrainConfig.stn_benchmark()
    model, metrics = train_stn_classifier(args.mode, config)
    metrics.write_csv(args.out_csv)
    save_weights(args.out_weights, model.params())
    if metrics.records:
        last = metrics.records[-1]
        print(f"epoch {last.epoch}: loss={last.loss_total:.6f} accuracy={last.accuracy:.4f}")
    print(f"metrics -> {args.out_csv}, weights -> {args.out_weights}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="seaclear",
        description="Underwater image synthesis, dehazing, warping and desk-scale training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a hazy image from clear + depth")
    p.add_argument("--clear", required=True, help="clear input image (PGM/PPM)")
    p.add_argument("--depth", required=True, help="depth map (16-bit PGM with depth-scale comment)")
    p.add_argument("--beta", required=True, help="attenuation per channel, e.g. 0.4,0.3,0.25")
    p.add_argument("--bg", required=True, help="background light per channel, e.g. 0.6,0.8,0.85")
    p.add_argument("--out", required=True)
    p.add_argument("--maxval", type=int, default=255)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dehaze", help="dark-channel dehaze an image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--patch", type=int, default=DEFAULT_PATCH)
    p.add_argument("--omega", type=float, default=DEFAULT_OMEGA)
    p.add_argument("--fraction", type=float, default=DEFAULT_FRACTION)
    p.add_argument("--out", required=True)
    p.add_argument("--save-t", dest="save_t", help="optionally write the transmission map (PGM)")
    p.add_argument("--maxval", type=int, default=255)
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("warp", help="warp an image by an 8-parameter perspective transform")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--theta", required=True, help="t11,t12,t13,t21,t22,t23,t31,t32")
    p.add_argument("--out", required=True)
    p.add_argument("--maxval", type=int, default=255)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-deblur", help="run the self-supervised deblurring loop")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out-csv", default="deblur_metrics.csv")
    p.add_argument("--out-weights", default="deblur_weights.dsow")
    p.set_defaults(func=cmd_train_deblur)

    p = sub.add_parser("stn-demo", help="run the viewpoint-invariance shape benchmark")
    p.add_argument("--mode", required=True, choices=("none", "affine", "perspective"))
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out-csv", default="stn_metrics.csv")
    p.add_argument("--out-weights", default="stn_weights.dsow")
    p.set_defaults(func=cmd_stn_demo)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except ParameterError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as e:
        # includes singular transforms
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except (FileFormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
