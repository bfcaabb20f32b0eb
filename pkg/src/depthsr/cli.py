"""``depthsr`` command line: synth, prepare, train, eval, infer, gradcheck.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""
import argparse
import logging
import os
import sys
import tempfile

import numpy as np

from . import data as D
from .baselines import bicubic_sr, guided_filter_sr
from .config import ConfigError, RunConfig
from .losses import LossWeights
from .metrics import evaluate
from .network import (
    SCALES,
    CheckpointError,
    NetworkConfig,
    forward,
    load_checkpoint,
    parameter_shapes,
    save_checkpoint,
    validate_pair,
)
from .render import save_error_heatmap
from .training import NonFiniteLossError, grad_check_detailed, train

log = logging.getLogger("depthsr")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
FULL_GATE = 1e-3
L1_GATE = 1e-5


class ValidationError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _atomic_write(path, writer):
    """Call ``writer(tmp_path)`` and move the result into place."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=os.path.splitext(path)[1])
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _load_config(args):
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    cfg.override(getattr(args, "set", None) or [])
    return cfg


def _require_dir(path, what):
    if not os.path.isdir(path):
        raise ValidationError(f"{what} directory {path!r} does not exist")
    pairs = D.discover_pairs(path)
    if not pairs:
        raise ValidationError(f"{what} directory {path!r} holds no RGB-D pairs")
    return pairs


def _samples_from_dir(path, scale, complete=True):
    _require_dir(path, "data")
    samples = []
    for pair in D.load_directory(path):
        if pair.shape[0] % scale or pair.shape[1] % scale:
            raise ValidationError(f"{pair.source_id}: {pair.shape} not divisible by scale {scale}")
        if complete and not pair.depth.valid_mask.all():
            pair = D.RgbdPair(pair.color, D.complete_depth(pair.depth), pair.source_id)
        samples.append(D.make_sr_sample(pair, scale))
    return samples


# --- commands -----------------------------------------------------------

def cmd_synth(args):
    h, w = args.size
    if h < 64 or w < 64:
        raise ValidationError(f"--size must be at least 64 64, got {h} {w}")
    if args.count < 1:
        raise ValidationError("--count must be >= 1")
    pairs = [D.synth_scene(args.seed + i, h, w) for i in range(args.count)]
    D.write_pairs(pairs, args.out)
    print(f"wrote {len(pairs)} pairs to {args.out}")


def cmd_prepare(args):
    cfg = _load_config(args)
    dcfg = cfg.section("data")
    size = args.patch if args.patch is not None else dcfg["patch_size"]
    stride = args.stride if args.stride is not None else dcfg["stride"]
    rot = args.rot90 or dcfg["rot90"]
    _require_dir(args.inp, "input")
    pairs = D.load_directory(args.inp)
    for p in pairs:
        if min(p.shape) < size:
            raise ValidationError(f"{p.source_id}: {p.shape} smaller than patch {size}")
    out = []
    for pair in pairs:
        if dcfg["complete"] and not pair.depth.valid_mask.all():
            pair = D.RgbdPair(pair.color, D.complete_depth(pair.depth), pair.source_id)
        ps = D.extract_patches(pair, size, stride)
        if rot:
            ps = D.augment_patchset(ps)
        out.extend(ps.patches)
    D.write_pairs(out, args.out)
    print(f"wrote {len(out)} patches ({size}x{size}, stride {stride}"
          f"{', rot90' if rot else ''}) to {args.out}")


def cmd_train(args):
    cfg = _load_config(args)
    if args.steps is not None:
        cfg.set("train", "max_steps", args.steps)
    net_cfg = cfg.network_config()
    tcfg = cfg.train_config(args.scale)
    samples = _samples_from_dir(args.data, args.scale, cfg.section("data")["complete"])
    for s in samples:
        try:
            validate_pair(s.lr_depth.shape, s.hr_color.shape, net_cfg)
        except ValueError as exc:
            raise ValidationError(f"{s.source_id}: {exc}") from exc
    log_path = args.log or os.path.splitext(args.out)[0] + "_log.csv"

    def checkpoint(step, p):
        if tcfg.checkpoint_every and step % tcfg.checkpoint_every == 0:
            _atomic_write(args.out, lambda tmp: save_checkpoint(p, tmp))

    try:
        params, tlog = train(tcfg, samples, net_cfg, on_step=checkpoint)
    except NonFiniteLossError as exc:
        raise NumericalFailure(str(exc)) from exc
    _atomic_write(args.out, lambda tmp: save_checkpoint(params, tmp))
    _atomic_write(log_path, tlog.write_csv)
    last = tlog.records[-1]
    print(f"trained {last.step} steps; final loss {last.total:.6f}; checkpoint {args.out}; log {log_path}")


def _method(args, cfg):
    ecfg = cfg.section("eval")
    if args.method == "bicubic":
        return bicubic_sr, None
    if args.method == "gf":
        return (lambda s: guided_filter_sr(s, ecfg["gf_radius"], ecfg["gf_eps"])), None
    if not args.ckpt:
        raise ValidationError("--method mpfn needs --ckpt")
    params, net_cfg = load_checkpoint(args.ckpt)
    if args.config and cfg.section("network"):
        expected = cfg.network_config()
        if expected != net_cfg:
            raise ValidationError(f"checkpoint config {net_cfg} does not match --config {expected}")
    return (lambda s: forward(s.lr_depth, s.hr_color, params)), net_cfg


def cmd_eval(args):
    cfg = _load_config(args)
    method, net_cfg = _method(args, cfg)
    samples = _samples_from_dir(args.data, args.scale, cfg.section("data")["complete"])
    if net_cfg is not None:
        for s in samples:
            try:
                validate_pair(s.lr_depth.shape, s.hr_color.shape, net_cfg)
            except ValueError as exc:
                raise ValidationError(f"{s.source_id}: {exc}") from exc
    report = evaluate(method, samples, cfg.section("eval")["report_scale"], cfg.digest(), args.method)
    _atomic_write(args.report, report.write_csv)
    if args.dump_images:
        os.makedirs(args.dump_images, exist_ok=True)
        for s in samples:
            pred = method(s)
            D.save_depth_png(pred, os.path.join(args.dump_images, f"{s.source_id}_pred.png"))
            err = np.abs(pred.values - s.hr_depth_gt.values)
            save_error_heatmap(err, os.path.join(args.dump_images, f"{s.source_id}_err.png"))
    print(report.summary())


def cmd_infer(args):
    if args.scale not in SCALES:
        raise ValidationError(f"--scale must be one of {SCALES}")
    params, net_cfg = load_checkpoint(args.ckpt)
    color = D.read_color_png(args.color)
    depth = D.read_depth_png(args.depth)
    if (depth.height * args.scale, depth.width * args.scale) != color.shape:
        raise ValidationError(f"color {color.shape} is not {args.scale} x depth {depth.shape}")
    try:
        validate_pair(depth.shape, color.shape, net_cfg)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if not depth.valid_mask.all():
        depth = D.complete_depth(depth)
    out = forward(depth, color, params)
    _atomic_write(args.out, lambda tmp: D.save_depth_png(out, tmp))
    print(f"wrote {out.height}x{out.width} depth to {args.out}")


def cmd_gradcheck(args):
    net_cfg = NetworkConfig(levels=args.levels, seed=args.seed,
                            decoder_channels=(3,) * (args.levels + 1),
                            min_input_size=2 ** args.levels)
    if args.corrupt is not None and args.corrupt not in parameter_shapes(net_cfg):
        raise ValidationError(f"--corrupt: no parameter named {args.corrupt!r}")
    failed = False
    for label, w, gate in (("full", LossWeights(), FULL_GATE), ("l1", LossWeights(1.0, 0.0, 0.0), L1_GATE)):
        r = grad_check_detailed(net_cfg, w, args.eps, args.seed, args.max_entries, corrupt=args.corrupt)
        ok = r.max_relative_error < gate
        failed |= not ok
        print(f"{label:<5} max_rel_error={r.max_relative_error:.3e} gate={gate:.0e} "
              f"checked={r.checked} skipped_kinks={r.skipped_kinks} worst={r.worst_parameter} "
              f"{'PASS' if ok else 'FAIL'}")
    if failed:
        raise NumericalFailure("gradient check failed")


# --- entry --------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="depthsr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="progress logging to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("synth", help="write synthetic RGB-D pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, nargs=2, default=(64, 64), metavar=("H", "W"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="cut pairs into patches")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--rot90", action="store_true")
    with_config(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the fusion network")
    p.add_argument("--data", required=True)
    p.add_argument("--scale", type=int, required=True, choices=SCALES)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV (default: <out>_log.csv)")
    p.add_argument("--steps", type=int, help="stop after this many updates")
    with_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a method on HR pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--scale", type=int, required=True, choices=SCALES)
    p.add_argument("--method", choices=("mpfn", "bicubic", "gf"), default="mpfn")
    p.add_argument("--ckpt")
    p.add_argument("--report", required=True)
    p.add_argument("--dump-images", metavar="DIR")
    with_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="upscale one LR depth map")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--color", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=5000,
                   help="check a seeded subsample when the model has more entries (min 500)")
    p.add_argument("--corrupt", metavar="PARAM", help="negative control: perturb PARAM's gradient")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValidationError, ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
